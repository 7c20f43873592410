//! Variance-component likelihoods with analytic gradients, and their
//! maximization over `η = (θ, σ²)` on the log scale.
//!
//! Three criteria share one evaluator: the likelihood of a residual vector at
//! fixed `β`, the profiled likelihood with `β` replaced by its GLS value, and
//! the restricted (REML) version of the latter.

use crate::error::{Error, Result};
use crate::lmm::{cholesky_group, group_covariance, CovStructure, GroupedDataset, ModelParams};
use crate::optim::{self, BfgsOptions};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};

/// Lower bound on every variance parameter during optimization.
pub const VARIANCE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// Likelihood of `y − Xβ` for a fixed `β`.
    Residual,
    /// `max_β l_n(β, η)`.
    ProfiledMl,
    /// `max_β l_n(β, η) − ½ log|Xᵀ Σ⁻¹ X|`.
    ProfiledReml,
}

#[derive(Debug, Clone)]
pub struct Evaluation<T: Scalar> {
    pub value: T,
    /// Gradient with respect to `(θ_1, …, θ_{q*}, σ²)`.
    pub grad: DVector<T>,
    /// GLS coefficients for the profiled criteria, the fixed `β` otherwise.
    pub beta: DVector<T>,
}

/// Criterion value and gradient at `eta = (θ, σ²)`.
pub fn evaluate<T: Scalar>(
    ds: &GroupedDataset<T>,
    cov: CovStructure,
    eta: &DVector<T>,
    criterion: Criterion,
    fixed_beta: Option<&DVector<T>>,
) -> Result<Evaluation<T>> {
    let q = ds.q();
    let qs = cov.num_params(q);
    if eta.len() != qs + 1 {
        return Err(Error::Dimension(format!("eta has length {}, expected {}", eta.len(), qs + 1)));
    }
    let theta = eta.rows(0, qs).into_owned();
    let sigma2 = eta[qs];
    let psi = cov.psi_diag(&theta, q)?;
    let p = ds.p();

    let mut inverses = Vec::with_capacity(ds.num_groups());
    let mut logdet = T::zero();
    for (gi, g) in ds.groups().iter().enumerate() {
        let chol = cholesky_group(group_covariance(&g.z, &psi, sigma2), gi)?;
        logdet += chol.l_dirty().diagonal().iter().fold(T::zero(), |a, &d| a + d.ln()) * T::lit(2.0);
        inverses.push(chol.inverse());
    }

    let (beta, a_chol) = match criterion {
        Criterion::Residual => {
            let b = fixed_beta.ok_or_else(|| Error::InvalidParameter("residual criterion needs beta".into()))?;
            ds.check_beta(b)?;
            (b.clone(), None)
        }
        Criterion::ProfiledMl | Criterion::ProfiledReml => {
            let mut a = DMatrix::<T>::zeros(p, p);
            let mut c = DVector::<T>::zeros(p);
            for (g, si) in ds.groups().iter().zip(&inverses) {
                let sx = si * &g.x;
                a += g.x.transpose() * &sx;
                c += sx.transpose() * &g.y;
            }
            let chol = a
                .cholesky()
                .ok_or_else(|| Error::RankDeficient("X'Σ⁻¹X is not positive definite".into()))?;
            (chol.solve(&c), Some(chol))
        }
    };

    let n = ds.n();
    let mut quad = T::zero();
    let mut grad = DVector::<T>::zeros(qs + 1);
    // Σ_i X_iᵀ Σ_i⁻¹ D_k Σ_i⁻¹ X_i, needed only for REML
    let mut reml_terms = vec![DMatrix::<T>::zeros(p, p); if criterion == Criterion::ProfiledReml { qs + 1 } else { 0 }];
    let half = T::lit(0.5);
    for (g, si) in ds.groups().iter().zip(&inverses) {
        let r = &g.y - &g.x * &beta;
        let sr = si * &r;
        quad += r.dot(&sr);
        let sz = si * &g.z;
        let sx = if reml_terms.is_empty() { None } else { Some(si * &g.x) };
        for k in 0..q {
            let zk = g.z.column(k);
            let tr = zk.dot(&sz.column(k));
            let u = zk.dot(&sr);
            let idx = match cov {
                CovStructure::Diagonal => k,
                CovStructure::Isotropic => 0,
            };
            grad[idx] -= half * (tr - u * u);
            if let Some(sx) = &sx {
                let w = sx.transpose() * zk;
                reml_terms[idx] += &w * w.transpose();
            }
        }
        let tr = si.trace();
        grad[qs] -= half * (tr - sr.dot(&sr));
        if let Some(sx) = &sx {
            reml_terms[qs] += sx.transpose() * sx;
        }
    }
    let mut value = -half * (T::from_count(n) * T::two_pi().ln() + logdet + quad);
    if let (Criterion::ProfiledReml, Some(chol)) = (criterion, &a_chol) {
        let ld = chol.l_dirty().diagonal().iter().fold(T::zero(), |a, &d| a + d.ln()) * T::lit(2.0);
        value -= half * ld;
        for (k, m) in reml_terms.iter().enumerate() {
            grad[k] += half * chol.solve(m).trace();
        }
    }
    if !value.is_finite_value() {
        return Err(Error::InvalidParameter("variance criterion is not finite".into()));
    }
    Ok(Evaluation { value, grad, beta })
}

#[derive(Debug, Clone)]
pub struct VarianceFit<T: Scalar> {
    pub theta: DVector<T>,
    pub sigma2: T,
    pub beta: DVector<T>,
    /// Criterion value at the optimum.
    pub value: T,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> VarianceFit<T> {
    pub fn params(&self, cov: CovStructure) -> Result<ModelParams<T>> {
        ModelParams::new(self.beta.clone(), self.theta.clone(), self.sigma2, cov)
    }
}

/// Default starting point: every variance parameter at half the sample
/// variance of the residuals.
pub fn default_start<T: Scalar>(residuals: &DVector<T>, num_params: usize) -> DVector<T> {
    let n = T::from_count(residuals.len().max(2));
    let mean = residuals.sum() / n;
    let var = residuals.iter().fold(T::zero(), |a, &r| a + (r - mean).square()) / (n - T::one());
    let v = (var * T::lit(0.5)).max(T::lit(1e-4));
    DVector::from_element(num_params + 1, v)
}

/// Maximizes the criterion over `η` with BFGS on `φ = log(η − floor)`.
pub fn maximize<T: Scalar>(
    ds: &GroupedDataset<T>,
    cov: CovStructure,
    criterion: Criterion,
    fixed_beta: Option<&DVector<T>>,
    start: Option<DVector<T>>,
) -> Result<VarianceFit<T>> {
    let qs = cov.num_params(ds.q());
    let start = match start {
        Some(s) => s,
        None => {
            let beta0 = match fixed_beta {
                Some(b) => b.clone(),
                None => ols(ds)?,
            };
            let r = ds.stacked_y() - ds.stacked_x() * beta0;
            default_start(&r, qs)
        }
    };
    if start.len() != qs + 1 {
        return Err(Error::Dimension("starting eta has the wrong length".into()));
    }
    let floor = T::lit(VARIANCE_FLOOR);
    let scale = T::one() / T::from_count(ds.n());
    let to_eta = |phi: &DVector<T>| phi.map(|v| floor + v.exp());
    let phi0 = start.map(|v| (v - floor).max(T::lit(1e-12)).ln());
    let out = optim::minimize(
        |phi: &DVector<T>| {
            let eta = to_eta(phi);
            let ev = evaluate(ds, cov, &eta, criterion, fixed_beta).ok()?;
            let g = ev.grad.zip_map(phi, |gi, pi| -gi * pi.exp() * scale);
            Some((-ev.value * scale, g))
        },
        phi0,
        BfgsOptions { max_iter: 300, grad_tol: 1e-8, f_tol: 1e-14 },
    )
    .ok_or_else(|| Error::InvalidParameter("variance criterion undefined at the starting point".into()))?;
    let eta = to_eta(&out.x);
    let ev = evaluate(ds, cov, &eta, criterion, fixed_beta)?;
    Ok(VarianceFit {
        theta: eta.rows(0, qs).into_owned(),
        sigma2: eta[qs],
        beta: ev.beta,
        value: ev.value,
        iterations: out.iterations,
        converged: out.converged,
    })
}

/// Ordinary least squares on the stacked data.
pub(crate) fn ols<T: Scalar>(ds: &GroupedDataset<T>) -> Result<DVector<T>> {
    let x = ds.stacked_x();
    let xtx = x.transpose() * &x;
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("design matrix is rank deficient".into()))?;
    Ok(chol.solve(&(x.transpose() * ds.stacked_y())))
}
