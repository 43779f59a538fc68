//! Small fixed-size tensor helpers for the 2D setting.

use std::ops::{Add, AddAssign, Mul, Sub};

use nalgebra::{Matrix2, Vector2};

pub type Mat2 = Matrix2<f64>;
pub type Vec2 = Vector2<f64>;

/// Third-order tensor `G[i][j][k]`, used for the second gradient
/// `∂²y_i / ∂x_j ∂x_k`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Tensor3(pub [[[f64; 2]; 2]; 2]);

impl Tensor3 {
    pub const ZERO: Tensor3 = Tensor3([[[0.0; 2]; 2]; 2]);

    pub fn from_fn(mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::ZERO;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    t.0[i][j][k] = f(i, j, k);
                }
            }
        }
        t
    }

    /// Triple contraction `A ⋮ B = A_ijk B_ijk`.
    pub fn contract(&self, other: &Tensor3) -> f64 {
        let mut s = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    s += self.0[i][j][k] * other.0[i][j][k];
                }
            }
        }
        s
    }

    pub fn norm_squared(&self) -> f64 {
        self.contract(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Left action of a matrix on the first slot: `(Q G)_ijk = Q_il G_ljk`.
    pub fn left_mul(&self, q: &Mat2) -> Tensor3 {
        Tensor3::from_fn(|i, j, k| q[(i, 0)] * self.0[0][j][k] + q[(i, 1)] * self.0[1][j][k])
    }

    pub fn scale(&self, a: f64) -> Tensor3 {
        Tensor3::from_fn(|i, j, k| a * self.0[i][j][k])
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl Add for Tensor3 {
    type Output = Tensor3;
    fn add(self, rhs: Tensor3) -> Tensor3 {
        Tensor3::from_fn(|i, j, k| self.0[i][j][k] + rhs.0[i][j][k])
    }
}

impl AddAssign for Tensor3 {
    fn add_assign(&mut self, rhs: Tensor3) {
        *self = *self + rhs;
    }
}

impl Sub for Tensor3 {
    type Output = Tensor3;
    fn sub(self, rhs: Tensor3) -> Tensor3 {
        Tensor3::from_fn(|i, j, k| self.0[i][j][k] - rhs.0[i][j][k])
    }
}

impl Mul<f64> for Tensor3 {
    type Output = Tensor3;
    fn mul(self, rhs: f64) -> Tensor3 {
        self.scale(rhs)
    }
}

/// Cofactor matrix `det(F) F^{-T}`, i.e. the derivative of `det` at `F`.
pub fn cofactor(f: &Mat2) -> Mat2 {
    Mat2::new(f[(1, 1)], -f[(1, 0)], -f[(0, 1)], f[(0, 0)])
}

/// Frobenius product `A : B`.
pub fn ddot(a: &Mat2, b: &Mat2) -> f64 {
    a.component_mul(b).sum()
}

pub fn rotation(angle: f64) -> Mat2 {
    let (s, c) = angle.sin_cos();
    Mat2::new(c, -s, s, c)
}
