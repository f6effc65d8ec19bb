//! Elastic energies: stable Neo-Hookean for tetrahedral soft bodies and the
//! orthogonality potential that keeps affine bodies rigid.

use nalgebra::{SMatrix, SVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::TetMesh;
use crate::math::{project_spd, skew, Mat3, Vec3};

pub type Vec9 = SVector<f64, 9>;
pub type Mat9 = SMatrix<f64, 9, 9>;
pub type Vec12 = SVector<f64, 12>;
pub type Mat12 = SMatrix<f64, 12, 12>;

/// Default orthogonality stiffness for affine bodies (Pa).
pub const DEFAULT_ABD_STIFFNESS: f64 = 1e8;

#[derive(Debug, Error, PartialEq)]
pub enum MaterialError {
    #[error("invalid material: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
    pub friction: f64,
}

impl MaterialParams {
    /// Fin-ray style finger of the UMI gripper.
    pub fn umi_finger() -> Self {
        Self {
            young_modulus: 9.4e6,
            poisson_ratio: 0.3,
            density: 1100.0,
            friction: 3.5,
        }
    }

    pub fn soft_object() -> Self {
        Self {
            young_modulus: 1e5,
            poisson_ratio: 0.4,
            density: 1000.0,
            friction: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        if !(self.young_modulus > 0.0) {
            return Err(MaterialError::Invalid("young_modulus must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.poisson_ratio) {
            return Err(MaterialError::Invalid("poisson_ratio must lie in [0, 0.5)".into()));
        }
        if !(self.density > 0.0) {
            return Err(MaterialError::Invalid("density must be positive".into()));
        }
        if !(self.friction >= 0.0) {
            return Err(MaterialError::Invalid("friction must be non-negative".into()));
        }
        Ok(())
    }

    pub fn lame(&self) -> Result<(f64, f64), MaterialError> {
        lame_from_young_poisson(self.young_modulus, self.poisson_ratio)
    }
}

/// `(mu, lambda)` from Young's modulus and Poisson ratio.
pub fn lame_from_young_poisson(e: f64, nu: f64) -> Result<(f64, f64), MaterialError> {
    if !(e > 0.0) {
        return Err(MaterialError::Invalid("young_modulus must be positive".into()));
    }
    if !(0.0..0.5).contains(&nu) {
        return Err(MaterialError::Invalid(format!("poisson_ratio {nu} outside [0, 0.5)")));
    }
    let mu = e / (2.0 * (1.0 + nu));
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    Ok((mu, lambda))
}

/// Inverse of [`lame_from_young_poisson`].
pub fn young_poisson_from_lame(mu: f64, lambda: f64) -> (f64, f64) {
    let e = mu * (3.0 * lambda + 2.0 * mu) / (lambda + mu);
    let nu = lambda / (2.0 * (lambda + mu));
    (e, nu)
}

/// Rest-shape data of one tetrahedron.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TetElement {
    pub dm_inv: Mat3,
    pub volume: f64,
}

impl TetElement {
    pub fn new(rest: [&Vec3; 4]) -> Self {
        let dm = Mat3::from_columns(&[rest[1] - rest[0], rest[2] - rest[0], rest[3] - rest[0]]);
        let volume = dm.determinant() / 6.0;
        let dm_inv = dm.try_inverse().expect("rest tet is non-degenerate");
        Self { dm_inv, volume }
    }

    pub fn deformation_gradient(&self, x: [&Vec3; 4]) -> Mat3 {
        Mat3::from_columns(&[x[1] - x[0], x[2] - x[0], x[3] - x[0]]) * self.dm_inv
    }

    /// `d vec(F) / d x` with `vec` stacking columns and `x` stacking the four vertices.
    pub fn dfdx(&self) -> SMatrix<f64, 9, 12> {
        let mut m = SMatrix::<f64, 9, 12>::zeros();
        for j in 0..3 {
            let mut sum = 0.0;
            for k in 0..3 {
                let b = self.dm_inv[(k, j)];
                sum += b;
                for r in 0..3 {
                    m[(3 * j + r, 3 * (k + 1) + r)] = b;
                }
            }
            for r in 0..3 {
                m[(3 * j + r, r)] = -sum;
            }
        }
        m
    }
}

fn cofactor(f: &Mat3) -> Mat3 {
    let (f0, f1, f2) = (f.column(0), f.column(1), f.column(2));
    Mat3::from_columns(&[f1.cross(&f2), f2.cross(&f0), f0.cross(&f1)])
}

fn vec9(m: &Mat3) -> Vec9 {
    Vec9::from_column_slice(m.as_slice())
}

/// Stable Neo-Hookean energy density. The volume term uses `lambda + mu` so the
/// model reduces to linear elasticity with the given Lamé constants.
pub fn snh_energy_density(f: &Mat3, mu: f64, lambda: f64) -> f64 {
    let ic = f.norm_squared();
    let j = f.determinant();
    0.5 * mu * (ic - 3.0) - mu * (j - 1.0) + 0.5 * (lambda + mu) * (j - 1.0) * (j - 1.0)
}

/// First Piola-Kirchhoff stress.
pub fn snh_pk1(f: &Mat3, mu: f64, lambda: f64) -> Mat3 {
    let j = f.determinant();
    f * mu + cofactor(f) * ((lambda + mu) * (j - 1.0) - mu)
}

/// `d vec(P) / d vec(F)`.
pub fn snh_dpdf(f: &Mat3, mu: f64, lambda: f64) -> Mat9 {
    let j = f.determinant();
    let g = vec9(&cofactor(f));
    let (f0, f1, f2): (Vec3, Vec3, Vec3) = (f.column(0).into(), f.column(1).into(), f.column(2).into());
    let mut hj = Mat9::zeros();
    let blocks = [
        (0, 1, -skew(&f2)),
        (0, 2, skew(&f1)),
        (1, 2, -skew(&f0)),
    ];
    for (a, b, m) in blocks {
        hj.fixed_view_mut::<3, 3>(3 * a, 3 * b).copy_from(&m);
        hj.fixed_view_mut::<3, 3>(3 * b, 3 * a).copy_from(&m.transpose());
    }
    Mat9::identity() * mu + g * g.transpose() * (lambda + mu) + hj * ((lambda + mu) * (j - 1.0) - mu)
}

#[derive(Clone, Debug)]
pub struct ElementEval<const N: usize> {
    pub energy: f64,
    pub gradient: SVector<f64, N>,
    pub hessian: SMatrix<f64, N, N>,
}

/// Elastic energy of one tet (density times rest volume) with gradient and
/// Hessian over its 12 vertex coordinates.
pub fn neo_hookean_energy(elem: &TetElement, x: [&Vec3; 4], mu: f64, lambda: f64, project: bool) -> ElementEval<12> {
    let f = elem.deformation_gradient(x);
    let d = elem.dfdx();
    let energy = elem.volume * snh_energy_density(&f, mu, lambda);
    let gradient = d.transpose() * vec9(&snh_pk1(&f, mu, lambda)) * elem.volume;
    let mut hf = snh_dpdf(&f, mu, lambda);
    if project {
        hf = project_spd(&hf);
    }
    let hessian = d.transpose() * hf * d * elem.volume;
    ElementEval {
        energy,
        gradient,
        hessian: (hessian + hessian.transpose()) * 0.5,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineBodyState {
    pub p: Vec3,
    pub a: Mat3,
    pub stiffness: f64,
}

impl AffineBodyState {
    pub fn identity() -> Self {
        Self {
            p: Vec3::zeros(),
            a: Mat3::identity(),
            stiffness: DEFAULT_ABD_STIFFNESS,
        }
    }

    /// DOF vector `[p, a0, a1, a2]` with `a_i` the columns of `A`.
    pub fn dofs(&self) -> Vec12 {
        let mut q = Vec12::zeros();
        q.fixed_rows_mut::<3>(0).copy_from(&self.p);
        q.fixed_rows_mut::<9>(3).copy_from(&vec9(&self.a));
        q
    }
}

/// `stiffness * volume * |A^T A - I|_F^2` with derivatives over the 12 DOFs
/// `[p, a0, a1, a2]`. The translation block is always zero.
pub fn abd_orthogonality_energy(state: &AffineBodyState, volume: f64, project: bool) -> ElementEval<12> {
    let k = state.stiffness * volume;
    let a = &state.a;
    let c = a.transpose() * a - Mat3::identity();
    let energy = k * c.norm_squared();
    let mut gradient = Vec12::zeros();
    let mut sum_aat = Mat3::zeros();
    for j in 0..3 {
        sum_aat += a.column(j) * a.column(j).transpose();
    }
    for i in 0..3 {
        let mut gi = Vec3::zeros();
        for j in 0..3 {
            gi += a.column(j) * c[(i, j)];
        }
        gradient.fixed_rows_mut::<3>(3 + 3 * i).copy_from(&(gi * 4.0 * k));
    }
    let mut h9 = Mat9::zeros();
    for i in 0..3 {
        for l in 0..3 {
            let mut b = Mat3::identity() * c[(i, l)] + a.column(l) * a.column(i).transpose();
            if i == l {
                b += sum_aat;
            }
            h9.fixed_view_mut::<3, 3>(3 * i, 3 * l).copy_from(&(b * 4.0 * k));
        }
    }
    if project {
        h9 = project_spd(&h9);
    }
    let mut hessian = Mat12::zeros();
    hessian.fixed_view_mut::<9, 9>(3, 3).copy_from(&h9);
    ElementEval { energy, gradient, hessian }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StressField {
    pub cauchy: Vec<Mat3>,
    pub von_mises: Vec<f64>,
}

pub fn von_mises(sigma: &Mat3) -> f64 {
    let dev = sigma - Mat3::identity() * (sigma.trace() / 3.0);
    (1.5 * dev.norm_squared()).sqrt()
}

/// Per-tet Cauchy stress and von Mises scalar at positions `x`.
pub fn compute_stress(mesh: &TetMesh, x: &[Vec3], params: &MaterialParams) -> Result<StressField, MaterialError> {
    let (mu, lambda) = params.lame()?;
    let mut out = StressField::default();
    for t in &mesh.tets {
        let elem = TetElement::new(t.map(|v| &mesh.rest[v]));
        let f = elem.deformation_gradient(t.map(|v| &x[v]));
        let j = f.determinant();
        let sigma = snh_pk1(&f, mu, lambda) * f.transpose() / j;
        let sigma = (sigma + sigma.transpose()) * 0.5;
        out.von_mises.push(von_mises(&sigma));
        out.cauchy.push(sigma);
    }
    Ok(out)
}

/// Sampling ranges used when randomizing object materials and scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomizationRanges {
    /// Sampled log-uniformly.
    pub young_modulus: (f64, f64),
    pub friction: (f64, f64),
    pub scale: (f64, f64),
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        Self {
            young_modulus: (1e4, 1e7),
            friction: (0.1, 1.0),
            scale: (0.8, 1.25),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomizedObject {
    pub material: MaterialParams,
    pub scale: f64,
}

impl RandomizationRanges {
    pub fn sample(&self, base: &MaterialParams, rng: &mut impl Rng) -> RandomizedObject {
        let (lo, hi) = (self.young_modulus.0.ln(), self.young_modulus.1.ln());
        let mut material = *base;
        material.young_modulus = rng.random_range(lo..=hi).exp();
        material.friction = rng.random_range(self.friction.0..=self.friction.1);
        RandomizedObject {
            material,
            scale: rng.random_range(self.scale.0..=self.scale.1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn unit_tet() -> [Vec3; 4] {
        [Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()]
    }

    fn refs(x: &[Vec3; 4]) -> [&Vec3; 4] {
        [&x[0], &x[1], &x[2], &x[3]]
    }

    #[test]
    fn lame_examples() {
        assert_eq!(lame_from_young_poisson(1.0, 0.0).unwrap(), (0.5, 0.0));
        let (mu, lambda) = lame_from_young_poisson(9.4e6, 0.3).unwrap();
        assert!((mu - 3.615e6).abs() < 1e3 && (lambda - 5.423e6).abs() < 1e3);
        assert!(lame_from_young_poisson(1.0, 0.5).is_err());
    }

    #[test]
    fn rest_and_rotation_have_zero_energy() {
        let rest = unit_tet();
        let elem = TetElement::new(refs(&rest));
        let e = neo_hookean_energy(&elem, refs(&rest), 1e5, 2e5, false);
        assert!(e.energy.abs() < 1e-12 && e.gradient.norm() < 1e-9);
        let r = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let rotated = rest.map(|v| r * v + Vec3::new(0.1, 0.2, 0.3));
        let e = neo_hookean_energy(&elem, refs(&rotated), 1e5, 2e5, false);
        assert!(e.energy.abs() < 1e-10);
    }

    #[test]
    fn uniaxial_von_mises_matches_linear_limit() {
        let mesh = TetMesh::box_mesh(Vec3::repeat(1.0), [1, 1, 1]);
        let eps = 1e-4;
        let x: Vec<Vec3> = mesh.rest.iter().map(|v| Vec3::new(v.x * (1.0 + eps), v.y, v.z)).collect();
        let params = MaterialParams {
            young_modulus: 1e6,
            poisson_ratio: 0.0,
            density: 1000.0,
            friction: 0.5,
        };
        let s = compute_stress(&mesh, &x, &params).unwrap();
        for vm in s.von_mises {
            assert!((vm - 1e6 * eps).abs() < 0.05 * 1e6 * eps, "{vm}");
        }
    }

    #[test]
    fn hydrostatic_state_has_zero_von_mises() {
        assert!(von_mises(&(Mat3::identity() * 3.7e5)) < 1e-9);
    }

    #[test]
    fn abd_closed_forms() {
        let mut s = AffineBodyState::identity();
        assert_eq!(abd_orthogonality_energy(&s, 2.0, false).energy, 0.0);
        s.a = Mat3::identity() * 2.0;
        let e = abd_orthogonality_energy(&s, 2.0, false).energy;
        assert!((e - DEFAULT_ABD_STIFFNESS * 2.0 * 27.0).abs() < 1e-6);
    }

    #[test]
    fn randomization_stays_in_range() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let r = RandomizationRanges::default();
        for _ in 0..100 {
            let o = r.sample(&MaterialParams::soft_object(), &mut rng);
            assert!((1e4..=1e7).contains(&o.material.young_modulus));
            assert!((0.8..=1.25).contains(&o.scale));
        }
    }

    proptest! {
        #[test]
        fn energy_is_non_negative(
            entries in proptest::array::uniform9(-1.5f64..1.5),
            nu in 0.0f64..0.49,
        ) {
            let f = Mat3::from_column_slice(&entries) + Mat3::identity();
            let (mu, lambda) = lame_from_young_poisson(1.0, nu).unwrap();
            prop_assert!(snh_energy_density(&f, mu, lambda) >= -1e-12);
        }

        #[test]
        fn lame_inverts(e in 1.0f64..1e8, nu in 0.0f64..0.49) {
            let (mu, lambda) = lame_from_young_poisson(e, nu).unwrap();
            let (e2, nu2) = young_poisson_from_lame(mu, lambda);
            prop_assert!((e2 - e).abs() <= 1e-12 * e);
            prop_assert!((nu2 - nu).abs() <= 1e-12);
        }
    }
}
