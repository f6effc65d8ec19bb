//! Small linear-algebra helpers shared by every module.
//!
//! [`Dual2`] is a second-order forward-mode automatic differentiation scalar
//! over a fixed number of variables. Contact distance functions are written
//! once, generically over [`Real`], and evaluated either on plain `f64` or on
//! `Dual2<N>` to obtain exact gradients and Hessians.

use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::{DMatrix, SMatrix, SVector, SymmetricEigen};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Scalar operations needed by the generic distance kernels.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(&self) -> f64;
}

impl Real for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
}

/// Value, gradient and Hessian with respect to `N` independent variables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual2<const N: usize> {
    pub v: f64,
    pub g: SVector<f64, N>,
    pub h: SMatrix<f64, N, N>,
}

impl<const N: usize> Dual2<N> {
    pub fn constant(v: f64) -> Self {
        Self {
            v,
            g: SVector::zeros(),
            h: SMatrix::zeros(),
        }
    }

    /// The `i`-th independent variable with value `v`.
    pub fn variable(v: f64, i: usize) -> Self {
        let mut g = SVector::zeros();
        g[i] = 1.0;
        Self {
            v,
            g,
            h: SMatrix::zeros(),
        }
    }

    /// Applies a scalar function given its value and first two derivatives at `self.v`.
    pub fn chain(&self, f: f64, df: f64, ddf: f64) -> Self {
        Self {
            v: f,
            g: self.g * df,
            h: self.h * df + (self.g * self.g.transpose()) * ddf,
        }
    }

    pub fn sqrt(&self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.v))
    }

    pub fn ln(&self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v, -1.0 / (self.v * self.v))
    }

    pub fn recip(&self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }
}

impl<const N: usize> Add for Dual2<N> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            g: self.g + o.g,
            h: self.h + o.h,
        }
    }
}

impl<const N: usize> Sub for Dual2<N> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            v: self.v - o.v,
            g: self.g - o.g,
            h: self.h - o.h,
        }
    }
}

impl<const N: usize> Neg for Dual2<N> {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            v: -self.v,
            g: -self.g,
            h: -self.h,
        }
    }
}

impl<const N: usize> Mul for Dual2<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let cross = self.g * o.g.transpose();
        Self {
            v: self.v * o.v,
            g: self.g * o.v + o.g * self.v,
            h: self.h * o.v + o.h * self.v + cross + cross.transpose(),
        }
    }
}

impl<const N: usize> Div for Dual2<N> {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl<const N: usize> Real for Dual2<N> {
    fn constant(v: f64) -> Self {
        Dual2::constant(v)
    }
    fn value(&self) -> f64 {
        self.v
    }
}

/// Minimal 3-vector over a generic scalar, used by the AD distance kernels.
#[derive(Clone, Copy, Debug)]
pub struct V3<T>(pub [T; 3]);

impl<T: Real> V3<T> {
    pub fn from_vec(v: &Vec3) -> Self {
        V3([T::constant(v.x), T::constant(v.y), T::constant(v.z)])
    }
    pub fn sub(&self, o: &Self) -> Self {
        V3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
    pub fn dot(&self, o: &Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }
    pub fn cross(&self, o: &Self) -> Self {
        let a = &self.0;
        let b = &o.0;
        V3([
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ])
    }
    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }
}

impl<const N: usize> V3<Dual2<N>> {
    /// Vertex `slot` of a stencil: variables `3*slot .. 3*slot+3`.
    pub fn variable(v: &Vec3, slot: usize) -> Self {
        V3([
            Dual2::variable(v.x, 3 * slot),
            Dual2::variable(v.y, 3 * slot + 1),
            Dual2::variable(v.z, 3 * slot + 2),
        ])
    }
}

/// Clamps the eigenvalues of a symmetric matrix to be non-negative.
pub fn project_spd<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    let dynamic = DMatrix::from_column_slice(N, N, m.as_slice());
    SMatrix::<f64, N, N>::from_column_slice(project_spd_dyn(&dynamic).as_slice())
}

/// Clamps the eigenvalues of a symmetric matrix of runtime size.
pub fn project_spd_dyn(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let d = eig.eigenvalues.map(|l| l.max(0.0));
    let q = eig.eigenvectors;
    let out = &q * DMatrix::from_diagonal(&d) * q.transpose();
    (&out + out.transpose()) * 0.5
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Any unit vector orthogonal to `n` plus a second completing a right-handed frame.
pub fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t0 = n.cross(&helper).normalize();
    let t1 = n.cross(&t0);
    (t0, t1)
}

/// Rotation matrix from a unit quaternion given as (w, x, y, z).
pub fn quat_to_matrix(q: [f64; 4]) -> Mat3 {
    let uq = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        q[0], q[1], q[2], q[3],
    ));
    uq.to_rotation_matrix().into_inner()
}

pub fn matrix_to_quat(r: &Mat3) -> [f64; 4] {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
    [q.w, q.i, q.j, q.k]
}
