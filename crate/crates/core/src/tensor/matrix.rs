use std::ops::Mul;

use serde::{Deserialize, Serialize};

/// Row-major 3×3 matrix of `f64`, used for homographies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Matrix3(pub [f64; 9]);

impl Matrix3 {
    pub const IDENTITY: Matrix3 = Matrix3([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Self {
        let mut m = [0.0; 9];
        for (r, row) in rows.iter().enumerate() {
            m[3 * r..3 * r + 3].copy_from_slice(row);
        }
        Matrix3(m)
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.0[3 * r + c]
    }

    /// Translation by `(dx, dy)` pixels.
    pub fn translation(dx: f64, dy: f64) -> Self {
        Matrix3([1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0])
    }

    /// Uniform scaling by `s` about `(cx, cy)`.
    pub fn scaling_about(s: f64, cx: f64, cy: f64) -> Self {
        Matrix3([s, 0.0, cx * (1.0 - s), 0.0, s, cy * (1.0 - s), 0.0, 0.0, 1.0])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Matrix3([m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    /// Inverse via the adjugate; `None` when `|det| < 1e-12`.
    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if !d.is_finite() || d.abs() < 1e-12 {
            return None;
        }
        let m = &self.0;
        let adj = [
            m[4] * m[8] - m[5] * m[7],
            m[2] * m[7] - m[1] * m[8],
            m[1] * m[5] - m[2] * m[4],
            m[5] * m[6] - m[3] * m[8],
            m[0] * m[8] - m[2] * m[6],
            m[2] * m[3] - m[0] * m[5],
            m[3] * m[7] - m[4] * m[6],
            m[1] * m[6] - m[0] * m[7],
            m[0] * m[4] - m[1] * m[3],
        ];
        Some(Matrix3(adj.map(|v| v / d)))
    }

    /// Scales so the bottom-right entry is one; `None` if it is zero.
    pub fn normalized(&self) -> Option<Self> {
        let w = self.0[8];
        if w == 0.0 || !w.is_finite() {
            return None;
        }
        Some(Matrix3(self.0.map(|v| v / w)))
    }

    /// Applies the matrix to `(x, y, 1)` and dehomogenizes.
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        let u = m[0] * x + m[1] * y + m[2];
        let v = m[3] * x + m[4] * y + m[5];
        let w = m[6] * x + m[7] * y + m[8];
        (u / w, v / w)
    }

    pub fn max_abs_diff(&self, other: &Matrix3) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

impl Mul for Matrix3 {
    type Output = Matrix3;

    fn mul(self, rhs: Matrix3) -> Matrix3 {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[3 * r + c] = (0..3).map(|k| self.at(r, k) * rhs.at(k, c)).sum();
            }
        }
        Matrix3(out)
    }
}
