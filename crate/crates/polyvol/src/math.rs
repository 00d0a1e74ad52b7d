//! Scalar abstraction and small fixed-size linear algebra used throughout the
//! pipeline.
//!
//! The whole renderer is generic over [`Real`] so the same code runs in single
//! precision (the performance default) and double precision (required by the
//! gradient and oracle tolerances).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Floating-point scalar the pipeline is generic over.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Name used in reports and file headers ("single" or "double").
    const PRECISION: &'static str;

    /// Lossless only for values representable in the target type; used for
    /// constants and configuration values.
    fn of(v: f64) -> Self {
        num_traits::FromPrimitive::from_f64(v).expect("finite constant")
    }

    fn of_usize(v: usize) -> Self {
        num_traits::FromPrimitive::from_usize(v).expect("usize fits scalar")
    }

    fn to_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar fits f64")
    }
}

impl Real for f32 {
    const PRECISION: &'static str = "single";
}

impl Real for f64 {
    const PRECISION: &'static str = "double";
}

/// Column 3-vector.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn splat(v: T) -> Self {
        Self::new(v, v, v)
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        self / self.norm()
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    /// Component-wise product.
    pub fn mul_elem(self, o: Self) -> Self {
        Self::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn min_elem(self) -> T {
        self.x.min(self.y).min(self.z)
    }

    pub fn max_elem(self) -> T {
        self.x.max(self.y).max(self.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn map<U: Real>(self, f: impl Fn(T) -> U) -> Vec3<U> {
        Vec3::new(f(self.x), f(self.y), f(self.z))
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> SubAssign for Vec3<T> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

impl<T: Real> Div<T> for Vec3<T> {
    type Output = Self;
    fn div(self, s: T) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat3<T> {
    pub rows: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn new(rows: [[T; 3]; 3]) -> Self {
        Self { rows }
    }

    pub fn identity() -> Self {
        let (o, l) = (T::zero(), T::one());
        Self::new([[l, o, o], [o, l, o], [o, o, l]])
    }

    pub fn zero() -> Self {
        Self::new([[T::zero(); 3]; 3])
    }

    pub fn from_rows(r0: Vec3<T>, r1: Vec3<T>, r2: Vec3<T>) -> Self {
        Self::new([r0.to_array(), r1.to_array(), r2.to_array()])
    }

    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3::from_array(self.rows[i])
    }

    pub fn col(&self, j: usize) -> Vec3<T> {
        Vec3::new(self.rows[0][j], self.rows[1][j], self.rows[2][j])
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                out.rows[j][i] = self.rows[i][j];
            }
        }
        out
    }

    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    /// `self^T * v` without materializing the transpose.
    pub fn transpose_mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3::new(self.col(0).dot(v), self.col(1).dot(v), self.col(2).dot(v))
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = T::zero();
                for k in 0..3 {
                    s += self.rows[i][k] * o.rows[k][j];
                }
                out.rows[i][j] = s;
            }
        }
        out
    }

    /// Accumulates the outer product `a * b^T`.
    pub fn add_outer(&mut self, a: Vec3<T>, b: Vec3<T>) {
        let (aa, bb) = (a.to_array(), b.to_array());
        for i in 0..3 {
            for j in 0..3 {
                self.rows[i][j] += aa[i] * bb[j];
            }
        }
    }

    /// Frobenius inner product with another matrix.
    pub fn frobenius_dot(&self, o: &Self) -> T {
        let mut s = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                s += self.rows[i][j] * o.rows[i][j];
            }
        }
        s
    }

    /// Max deviation of `R^T R` from identity; 0 for orthonormal matrices.
    pub fn orthonormality_error(&self) -> T {
        let gram = self.transpose().mul_mat(self);
        let mut err = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { T::one() } else { T::zero() };
                err = err.max((gram.rows[i][j] - target).abs());
            }
        }
        err
    }
}

/// Rotation quaternion stored as (w, x, y, z).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Quat<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Quat<T> {
    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(self) -> T {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn scaled(self, s: T) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    /// Rotation matrix of a unit quaternion.
    pub fn to_matrix(self) -> Mat3<T> {
        let Quat { w, x, y, z } = self;
        let two = T::of(2.0);
        let one = T::one();
        Mat3::new([
            [
                one - two * (y * y + z * z),
                two * (x * y - w * z),
                two * (x * z + w * y),
            ],
            [
                two * (x * y + w * z),
                one - two * (x * x + z * z),
                two * (y * z - w * x),
            ],
            [
                two * (x * z - w * y),
                two * (y * z + w * x),
                one - two * (x * x + y * y),
            ],
        ])
    }

    /// Partial derivatives of the rotation matrix w.r.t. each unit-quaternion
    /// component, ordered (w, x, y, z).
    pub fn matrix_jacobian(self) -> [Mat3<T>; 4] {
        let Quat { w, x, y, z } = self;
        let two = T::of(2.0);
        let o = T::zero();
        let dw = Mat3::new([[o, -z, y], [z, o, -x], [-y, x, o]]);
        let dx = Mat3::new([[o, y, z], [y, -two * x, -w], [z, w, -two * x]]);
        let dy = Mat3::new([[-two * y, x, w], [x, o, z], [-w, z, -two * y]]);
        let dz = Mat3::new([[-two * z, -w, x], [w, -two * z, y], [x, y, o]]);
        [
            scale_mat(dw, two),
            scale_mat(dx, two),
            scale_mat(dy, two),
            scale_mat(dz, two),
        ]
    }
}

fn scale_mat<T: Real>(mut m: Mat3<T>, s: T) -> Mat3<T> {
    for i in 0..3 {
        for j in 0..3 {
            m.rows[i][j] *= s;
        }
    }
    m
}

/// Logistic function; maps logits to (0, 1).
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Inverse of [`sigmoid`]; requires `p` strictly inside (0, 1).
pub fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}
