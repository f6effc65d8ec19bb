//! Log-barrier contact potential and lagged, smoothly mollified friction.

use nalgebra::{Matrix2, SMatrix, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::broad::{CollisionTopology, Primitive};
use crate::geometry::distance::{
    closest_on_triangle, closest_segment_params, edge_cross_sq, line_line_sq, mollifier_generic, mollifier_threshold,
    point_line_sq, point_plane_sq, point_point_sq, TriangleRegion,
};
use crate::materials::{ElementEval, Mat12, Vec12};
use crate::math::{project_spd, tangent_basis, Dual2, Real, Vec3, V3};

#[derive(Debug, Error, PartialEq)]
pub enum ContactError {
    #[error("non-positive contact distance {0}")]
    NonPositiveDistance(f64),
    #[error("invalid contact parameters: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactParams {
    /// Barrier stiffness (kg/s^2).
    pub kappa: f64,
    /// Activation distance (m).
    pub dhat: f64,
    /// Static to dynamic friction transition speed (m/s).
    pub eps_v: f64,
    /// Friction lag updates per time step.
    pub friction_iterations: usize,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            kappa: 3e6,
            dhat: 1e-3,
            eps_v: 1e-3,
            friction_iterations: 1,
        }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<(), ContactError> {
        for (name, v) in [("kappa", self.kappa), ("dhat", self.dhat), ("eps_v", self.eps_v)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ContactError::Invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// `b(d) = -(d - dhat)^2 ln(d / dhat)` for `d < dhat`, with first and second derivatives.
pub fn barrier(d: f64, dhat: f64) -> Result<(f64, f64, f64), ContactError> {
    if !(d > 0.0) {
        return Err(ContactError::NonPositiveDistance(d));
    }
    if d >= dhat {
        return Ok((0.0, 0.0, 0.0));
    }
    let r = d - dhat;
    let l = (d / dhat).ln();
    let b = -r * r * l;
    let db = -2.0 * r * l - r * r / d;
    let ddb = -2.0 * l - 4.0 * r / d + r * r / (d * d);
    Ok((b, db, ddb))
}

/// Barrier as a function of the squared distance `s = d^2`.
fn barrier_of_sq(s: f64, dhat: f64) -> Result<(f64, f64, f64), ContactError> {
    let d = s.sqrt();
    let (b, db, ddb) = barrier(d, dhat)?;
    let dbs = db / (2.0 * d);
    let ddbs = (ddb - db / d) / (4.0 * s);
    Ok((b, dbs, ddbs))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StencilKind {
    PointTriangle,
    EdgeEdge,
    PointEdge,
    PointPoint,
}

/// Which closed-form squared distance is active for a primitive pair. Slots
/// index the primitive's four vertices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
enum ActiveDistance {
    PointPlane,
    PointLine { p: usize, e0: usize, e1: usize },
    PointPoint { a: usize, b: usize },
    LineLine,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactStencil {
    pub kind: StencilKind,
    pub prim: Primitive,
    pub bodies: [usize; 2],
    /// Current distance (m).
    pub distance: f64,
    active: ActiveDistance,
    /// Parallel-edge mollifier threshold; zero for point-triangle pairs.
    eps_x: f64,
}

impl ContactStencil {
    /// Classifies `prim` at positions `x`. `rest` provides the rest edge
    /// lengths for the edge-edge mollifier.
    pub fn new(prim: Primitive, x: &[Vec3], rest: &[Vec3], topology: &CollisionTopology) -> Self {
        let ids = prim.vertices();
        let v = ids.map(|i| x[i]);
        let bodies = [topology.vertex_body[ids[0]], topology.vertex_body[ids[2]]];
        let (kind, active, eps_x, distance) = match prim {
            Primitive::PointTriangle { .. } => {
                let (region, w) = closest_on_triangle(&v[0], &v[1], &v[2], &v[3]);
                let d = (v[0] - (v[1] * w[0] + v[2] * w[1] + v[3] * w[2])).norm();
                let (kind, active) = match region {
                    TriangleRegion::Face => (StencilKind::PointTriangle, ActiveDistance::PointPlane),
                    TriangleRegion::Edge(i) => {
                        let i = i as usize;
                        (
                            StencilKind::PointEdge,
                            ActiveDistance::PointLine { p: 0, e0: 1 + i, e1: 1 + (i + 1) % 3 },
                        )
                    }
                    TriangleRegion::Vertex(i) => (
                        StencilKind::PointPoint,
                        ActiveDistance::PointPoint { a: 0, b: 1 + i as usize },
                    ),
                };
                (kind, active, 0.0, d)
            }
            Primitive::EdgeEdge { .. } => {
                let (s, t) = closest_segment_params(&v[0], &v[1], &v[2], &v[3]);
                let d = ((v[0] + (v[1] - v[0]) * s) - (v[2] + (v[3] - v[2]) * t)).norm();
                let end = |u: f64| if u <= 0.0 { Some(0) } else if u >= 1.0 { Some(1) } else { None };
                let (kind, active) = match (end(s), end(t)) {
                    (None, None) => (StencilKind::EdgeEdge, ActiveDistance::LineLine),
                    (Some(a), None) => (StencilKind::PointEdge, ActiveDistance::PointLine { p: a, e0: 2, e1: 3 }),
                    (None, Some(b)) => (StencilKind::PointEdge, ActiveDistance::PointLine { p: 2 + b, e0: 0, e1: 1 }),
                    (Some(a), Some(b)) => (StencilKind::PointPoint, ActiveDistance::PointPoint { a, b: 2 + b }),
                };
                let r = ids.map(|i| rest[i]);
                (kind, active, mollifier_threshold((&r[0], &r[1]), (&r[2], &r[3])), d)
            }
        };
        Self {
            kind,
            prim,
            bodies,
            distance,
            active,
            eps_x,
        }
    }

    pub fn vertices(&self) -> [usize; 4] {
        self.prim.vertices()
    }

    fn sq_distance<T: Real>(&self, v: &[V3<T>; 4]) -> T {
        match self.active {
            ActiveDistance::PointPlane => point_plane_sq(&v[0], &v[1], &v[2], &v[3]),
            ActiveDistance::PointLine { p, e0, e1 } => point_line_sq(&v[p], &v[e0], &v[e1]),
            ActiveDistance::PointPoint { a, b } => point_point_sq(&v[a], &v[b]),
            ActiveDistance::LineLine => line_line_sq(&v[0], &v[1], &v[2], &v[3]),
        }
    }

    fn mollifier<T: Real>(&self, v: &[V3<T>; 4]) -> T {
        match self.prim {
            Primitive::PointTriangle { .. } => T::constant(1.0),
            Primitive::EdgeEdge { .. } => mollifier_generic(edge_cross_sq(&v[0], &v[1], &v[2], &v[3]), self.eps_x),
        }
    }

    /// Mollifier weight at `x` (one for point-triangle pairs).
    pub fn mollifier_weight(&self, x: &[Vec3]) -> f64 {
        let v = self.vertices().map(|i| V3::<f64>::from_vec(&x[i]));
        self.mollifier(&v)
    }

    /// Distance at `x` using the classification made at construction.
    pub fn distance_at(&self, x: &[Vec3]) -> f64 {
        let v = self.vertices().map(|i| V3::<f64>::from_vec(&x[i]));
        self.sq_distance(&v).sqrt()
    }

    /// Barrier-force magnitude `kappa * e * |b'(d)|` (N).
    pub fn normal_force(&self, x: &[Vec3], params: &ContactParams) -> Result<f64, ContactError> {
        let d = self.distance_at(x);
        let (_, db, _) = barrier(d, params.dhat)?;
        Ok(params.kappa * self.mollifier_weight(x) * db.abs())
    }

    /// Weighted barrier `kappa * e(x) * b(d(x))` with derivatives over the four
    /// stencil vertices; `None` outside the activation distance.
    pub fn barrier_term(
        &self,
        x: &[Vec3],
        params: &ContactParams,
        project: bool,
    ) -> Result<Option<ElementEval<12>>, ContactError> {
        let ids = self.vertices();
        let plain = ids.map(|i| V3::<f64>::from_vec(&x[i]));
        let s = self.sq_distance(&plain);
        if !(s > 0.0) {
            return Err(ContactError::NonPositiveDistance(s.max(0.0).sqrt()));
        }
        if s >= params.dhat * params.dhat {
            return Ok(None);
        }
        let dual: [V3<Dual2<12>>; 4] = [0, 1, 2, 3].map(|k| V3::variable(&x[ids[k]], k));
        let sd = self.sq_distance(&dual);
        let (b, dbs, ddbs) = barrier_of_sq(sd.v, params.dhat)?;
        let bd = sd.chain(b, dbs, ddbs);
        let e = self.mollifier(&dual) * bd * Dual2::constant(params.kappa);
        let hessian = if project { project_spd(&e.h) } else { e.h };
        Ok(Some(ElementEval {
            energy: e.v,
            gradient: e.g,
            hessian,
        }))
    }
}

/// Sum of local terms, each acting on four world vertices.
#[derive(Clone, Debug, Default)]
pub struct LocalTerms {
    pub energy: f64,
    pub terms: Vec<([usize; 4], ElementEval<12>)>,
}

impl LocalTerms {
    /// Dense gradient over `3 * n_vertices` coordinates.
    pub fn dense_gradient(&self, n_vertices: usize) -> nalgebra::DVector<f64> {
        let mut g = nalgebra::DVector::zeros(3 * n_vertices);
        for (ids, t) in &self.terms {
            for (k, &v) in ids.iter().enumerate() {
                for r in 0..3 {
                    g[3 * v + r] += t.gradient[3 * k + r];
                }
            }
        }
        g
    }

    pub fn dense_hessian(&self, n_vertices: usize) -> nalgebra::DMatrix<f64> {
        let mut h = nalgebra::DMatrix::zeros(3 * n_vertices, 3 * n_vertices);
        for (ids, t) in &self.terms {
            for (a, &va) in ids.iter().enumerate() {
                for (b, &vb) in ids.iter().enumerate() {
                    for r in 0..3 {
                        for c in 0..3 {
                            h[(3 * va + r, 3 * vb + c)] += t.hessian[(3 * a + r, 3 * b + c)];
                        }
                    }
                }
            }
        }
        h
    }
}

/// `kappa * sum_k e_k b(d_k)` over the stencils, per-stencil Hessians projected.
pub fn contact_potential(
    stencils: &[ContactStencil],
    x: &[Vec3],
    params: &ContactParams,
) -> Result<LocalTerms, ContactError> {
    let mut out = LocalTerms::default();
    for s in stencils {
        if let Some(t) = s.barrier_term(x, params, true)? {
            out.energy += t.energy;
            out.terms.push((s.vertices(), t));
        }
    }
    Ok(out)
}

/// `(f0(y), f1(y))` of the smoothed friction law with `eps = eps_v * dt`.
/// `f1` ramps from 0 to 1 on `[0, eps]`; `f0` is its antiderivative with `f0(0) = 0`.
pub fn friction_mollifier(y: f64, eps_v: f64, dt: f64) -> (f64, f64) {
    let eps = eps_v * dt;
    if y < eps {
        let f1 = -y * y / (eps * eps) + 2.0 * y / eps;
        let f0 = -y * y * y / (3.0 * eps * eps) + y * y / eps;
        (f0, f1)
    } else {
        (y - eps / 3.0, 1.0)
    }
}

/// Friction data frozen at the start of a time step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrictionAnchor {
    pub stencil: ContactStencil,
    /// Lagged normal force (N).
    pub lambda: f64,
    pub mu: f64,
    /// Orthonormal tangent directions.
    pub basis: [Vec3; 2],
    pub normal: Vec3,
    /// Weights mapping the four vertex displacements to the relative displacement.
    pub coeffs: [f64; 4],
}

impl FrictionAnchor {
    /// Tangential relative displacement between `x_prev` and `x`.
    pub fn slip(&self, x: &[Vec3], x_prev: &[Vec3]) -> Vector2<f64> {
        let mut rel = Vec3::zeros();
        for (k, &v) in self.stencil.vertices().iter().enumerate() {
            rel += (x[v] - x_prev[v]) * self.coeffs[k];
        }
        Vector2::new(self.basis[0].dot(&rel), self.basis[1].dot(&rel))
    }

    /// `mu * lambda * f0(|u|)` with derivatives over the four stencil vertices.
    pub fn potential(&self, x: &[Vec3], x_prev: &[Vec3], eps_v: f64, dt: f64, project: bool) -> ElementEval<12> {
        let u = self.slip(x, x_prev);
        let y = u.norm();
        let scale = self.mu * self.lambda;
        let eps = eps_v * dt;
        let (f0, _) = friction_mollifier(y, eps_v, dt);
        // f1(y) / y and the Hessian in tangent space.
        let (f1_over_y, h2) = if y < eps {
            let q = -y / (eps * eps) + 2.0 / eps;
            let radial = if y > 0.0 { -1.0 / (eps * eps * y) } else { 0.0 };
            (q, u * u.transpose() * radial + Matrix2::identity() * q)
        } else {
            (1.0 / y, u * u.transpose() * (-1.0 / (y * y * y)) + Matrix2::identity() * (1.0 / y))
        };
        let h2 = if project { project_spd(&h2) } else { h2 };
        let mut jac = SMatrix::<f64, 12, 2>::zeros();
        for k in 0..4 {
            for (col, t) in self.basis.iter().enumerate() {
                jac.fixed_view_mut::<3, 1>(3 * k, col).copy_from(&(t * self.coeffs[k]));
            }
        }
        let gradient: Vec12 = jac * u * (scale * f1_over_y);
        let hessian: Mat12 = jac * h2 * jac.transpose() * scale;
        ElementEval {
            energy: scale * f0,
            gradient,
            hessian,
        }
    }
}

/// Builds anchors from a converged state. Stencils outside the activation
/// distance get `lambda = 0`.
pub fn update_friction_anchors(
    stencils: &[ContactStencil],
    x: &[Vec3],
    params: &ContactParams,
    mu: impl Fn(&ContactStencil) -> f64,
) -> Result<Vec<FrictionAnchor>, ContactError> {
    let mut out = Vec::with_capacity(stencils.len());
    for s in stencils {
        let ids = s.vertices();
        let v = ids.map(|i| x[i]);
        let (coeffs, sep) = match s.prim {
            Primitive::PointTriangle { .. } => {
                let (_, w) = closest_on_triangle(&v[0], &v[1], &v[2], &v[3]);
                let c = [1.0, -w[0], -w[1], -w[2]];
                (c, v[0] - (v[1] * w[0] + v[2] * w[1] + v[3] * w[2]))
            }
            Primitive::EdgeEdge { .. } => {
                let (a, b) = closest_segment_params(&v[0], &v[1], &v[2], &v[3]);
                let c = [1.0 - a, a, -(1.0 - b), -b];
                (c, (v[0] * c[0] + v[1] * c[1]) + (v[2] * c[2] + v[3] * c[3]))
            }
        };
        let d = sep.norm();
        if !(d > 0.0) {
            return Err(ContactError::NonPositiveDistance(d));
        }
        let normal = sep / d;
        let (t0, t1) = tangent_basis(&normal);
        let lambda = s.normal_force(x, params)?;
        out.push(FrictionAnchor {
            stencil: *s,
            lambda,
            mu: mu(s),
            basis: [t0, t1],
            normal,
            coeffs,
        });
    }
    Ok(out)
}

/// Geometric mean of the two bodies' coefficients.
pub fn combine_friction(a: f64, b: f64) -> f64 {
    (a * b).sqrt()
}

/// Sum of friction terms over anchors with positive normal force.
pub fn friction_potential(
    anchors: &[FrictionAnchor],
    x: &[Vec3],
    x_prev: &[Vec3],
    params: &ContactParams,
    dt: f64,
) -> LocalTerms {
    let mut out = LocalTerms::default();
    for a in anchors {
        if a.lambda > 0.0 && a.mu > 0.0 {
            let t = a.potential(x, x_prev, params.eps_v, dt, true);
            out.energy += t.energy;
            out.terms.push((a.stencil.vertices(), t));
        }
    }
    out
}
