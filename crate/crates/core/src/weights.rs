//! Weighting schedules for the weighted l1 and weighted nuclear norms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pinv_solve, singular_values, Matrix, Vector};

/// Singular values below this fraction of the largest are treated as zero
/// when forming the least-squares estimate.
pub const LS_RANK_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// All-ones weights: the plain l1 and nuclear norms.
    Uniform,
    /// Reciprocal weights computed once from the least-squares estimate.
    FixedLs,
    /// Reciprocal weights refreshed from the current iterate every iteration.
    Reweighted,
}

impl WeightMode {
    pub const ALL: [WeightMode; 3] = [WeightMode::Uniform, WeightMode::FixedLs, WeightMode::Reweighted];

    pub fn as_str(self) -> &'static str {
        match self {
            WeightMode::Uniform => "uniform",
            WeightMode::FixedLs => "fixed-ls",
            WeightMode::Reweighted => "reweighted",
        }
    }
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(WeightMode::Uniform),
            "fixed-ls" => Ok(WeightMode::FixedLs),
            "reweighted" => Ok(WeightMode::Reweighted),
            other => Err(Error::Config(format!("unknown weight mode `{other}`"))),
        }
    }
}

/// Entry weights `a` (N x K) and singular-value weights `b` (length min(N, K)).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    pub a: Matrix,
    pub b: Vector,
    pub mode: WeightMode,
}

impl WeightState {
    pub fn uniform(n: usize, k: usize) -> Self {
        WeightState {
            a: Matrix::from_element(n, k, 1.0),
            b: Vector::from_element(n.min(k), 1.0),
            mode: WeightMode::Uniform,
        }
    }
}

/// Builds the weights for `mode` from the estimate `w`.
///
/// For `FixedLs` the caller passes the least-squares estimate, for
/// `Reweighted` the current iterate. Entries are clipped at zero before the
/// reciprocal, so negative or zero entries receive the cap `1 / epsilon`.
pub fn update_weights(w: &Matrix, mode: WeightMode, epsilon: f64) -> Result<WeightState> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let (n, k) = w.shape();
    if mode == WeightMode::Uniform {
        return Ok(WeightState::uniform(n, k));
    }
    let a = w.map(|x| 1.0 / (x.max(0.0) + epsilon));
    let b = singular_values(w)?.map(|s| 1.0 / (s + epsilon));
    Ok(WeightState { a, b, mode })
}

/// Unconstrained least-squares estimate `(Phi^T Phi)^-1 Phi^T Y`, taken as the
/// minimum-norm pseudo-inverse solution when `Phi` is rank deficient.
pub fn ls_estimate(phi: &Matrix, y: &Matrix) -> Result<Matrix> {
    if phi.nrows() != y.nrows() {
        return Err(Error::dim("ls_estimate: Y rows vs Phi rows", phi.nrows(), y.nrows()));
    }
    pinv_solve(phi, y, LS_RANK_CUTOFF)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_entry_gets_the_cap() {
        let w = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, -3.0]);
        let ws = update_weights(&w, WeightMode::Reweighted, 1e-16).unwrap();
        assert_eq!(ws.a[(0, 0)], 1e16);
        assert_eq!(ws.a[(1, 1)], 1e16);
        assert!((ws.a[(0, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scaled_identity_weights() {
        let c = 2.5;
        let eps = 1e-6;
        let w = Matrix::identity(4, 4) * c;
        let ws = update_weights(&w, WeightMode::FixedLs, eps).unwrap();
        for i in 0..4 {
            assert!((ws.a[(i, i)] - 1.0 / (c + eps)).abs() < 1e-14);
            assert!((ws.b[i] - 1.0 / (c + eps)).abs() < 1e-12);
        }
        assert_eq!(ws.mode, WeightMode::FixedLs);
    }

    #[test]
    fn b_is_ascending_for_reweighting() {
        let w = Matrix::from_fn(5, 3, |i, j| ((i * 3 + j) as f64 * 0.77).sin().abs());
        let ws = update_weights(&w, WeightMode::Reweighted, 1e-16).unwrap();
        assert!(ws.b.as_slice().windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn uniform_mode_ignores_the_estimate() {
        let w = Matrix::from_element(3, 2, 7.0);
        let ws = update_weights(&w, WeightMode::Uniform, 1e-16).unwrap();
        assert_eq!(ws, WeightState::uniform(3, 2));
        assert!(update_weights(&w, WeightMode::Uniform, 0.0).is_err());
    }

    #[test]
    fn ls_with_orthonormal_columns() {
        let phi = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.6, 0.0, 0.8]);
        let y = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let ls = ls_estimate(&phi, &y).unwrap();
        assert!((ls - phi.transpose() * &y).norm() < 1e-12);
    }

    #[test]
    fn mode_parsing() {
        for m in WeightMode::ALL {
            assert_eq!(m.as_str().parse::<WeightMode>().unwrap(), m);
        }
        assert!("bogus".parse::<WeightMode>().is_err());
    }
}
