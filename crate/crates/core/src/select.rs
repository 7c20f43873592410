//! Regularization-parameter selection criteria and grids.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `−2 l + (|Ŝ| + dim(λ)) log n` with `dim(λ) = 1`.
pub fn bic_from_loglik<T: Scalar>(loglik: T, active: usize, n: usize) -> T {
    -T::lit(2.0) * loglik + T::from_count(active + 1) * T::from_count(n).ln()
}

/// `−2 L(β̂) + |Ŝ| log n` for a GMM loss value.
pub fn exbic<T: Scalar>(loss: T, active: usize, n: usize) -> T {
    -T::lit(2.0) * loss + T::from_count(active) * T::from_count(n).ln()
}

/// `len` log-spaced values from `hi` down to `lo`.
pub fn log_grid<T: Scalar>(hi: T, lo: T, len: usize) -> Vec<T> {
    match len {
        0 => vec![],
        1 => vec![hi],
        _ => {
            let (lh, ll) = (hi.ln(), lo.ln());
            let step = (lh - ll) / T::from_count(len - 1);
            (0..len).map(|k| (lh - step * T::from_count(k)).exp()).collect()
        }
    }
}

/// How `λ` is chosen for an estimator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum LambdaPolicy {
    Fixed { value: f64 },
    /// BIC over an explicit grid, or an automatic grid when `grid` is empty.
    Bic {
        #[serde(default)]
        grid: Vec<f64>,
    },
    Exbic { grid: Vec<f64> },
}

/// Number of points in the automatic BIC grid.
pub const AUTO_GRID_LEN: usize = 30;

impl LambdaPolicy {
    pub fn validate(&self) -> Result<()> {
        let grid = match self {
            LambdaPolicy::Fixed { value } => std::slice::from_ref(value),
            LambdaPolicy::Bic { grid } | LambdaPolicy::Exbic { grid } => grid.as_slice(),
        };
        if grid.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParameter("lambda values must be positive".into()));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("lambda grid must be strictly increasing".into()));
        }
        if matches!(self, LambdaPolicy::Exbic { grid } if grid.is_empty()) {
            return Err(Error::InvalidParameter("ExBIC needs an explicit grid".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_examples() {
        assert!((bic_from_loglik(-100.0f64, 5, 150) - 230.0637).abs() < 1e-3);
        assert!((exbic(0.002f64, 5, 150) - 25.0494).abs() < 1e-3);
        assert_eq!(exbic(0.0f64, 0, 150), 0.0);
    }

    #[test]
    fn grids() {
        let g = log_grid(1.0f64, 0.01, 3);
        assert!((g[1] - 0.1).abs() < 1e-12 && (g[2] - 0.01).abs() < 1e-12);
        assert!(LambdaPolicy::Bic { grid: vec![0.1, 0.05] }.validate().is_err());
        assert!(LambdaPolicy::Exbic { grid: vec![0.05, 0.1, 0.2] }.validate().is_ok());
        assert!(LambdaPolicy::Fixed { value: -1.0 }.validate().is_err());
    }
}
