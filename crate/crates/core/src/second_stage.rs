//! Post-selection estimation on the selected columns: residual-model ML for
//! the variance parameters, reduced-model ML and REML refits, BLUP, and the
//! prediction-error metric.

use crate::error::{Error, Result};
use crate::lmm::{cholesky_group, group_covariance, ActiveSet, CovStructure, GroupedDataset, ModelParams};
use crate::scalar::Scalar;
use crate::varcomp::{self, Criterion, VarianceFit};
use nalgebra::DVector;

/// The dataset restricted to `Ŝ`, with the map back to original columns.
#[derive(Debug, Clone)]
pub struct ReducedModel<T: Scalar> {
    pub data: GroupedDataset<T>,
    pub index_map: Vec<usize>,
    pub p_full: usize,
}

impl<T: Scalar> ReducedModel<T> {
    pub fn new(ds: &GroupedDataset<T>, active: &ActiveSet) -> Result<Self> {
        if active.is_empty() {
            return Err(Error::EmptyActiveSet);
        }
        if active.len() >= ds.n() {
            return Err(Error::RankDeficient(format!("|S| = {} is not below n = {}", active.len(), ds.n())));
        }
        let data = ds.select_columns(active.indices())?;
        let x = data.stacked_x();
        let (lo, hi) = crate::linalg::eig_extrema(&(x.transpose() * &x))?;
        if !(lo > hi * T::lit(1e-12)) {
            return Err(Error::RankDeficient("selected columns are collinear".into()));
        }
        Ok(Self { data, index_map: active.indices().to_vec(), p_full: ds.p() })
    }

    /// Embeds reduced coefficients into a length-`p` vector.
    pub fn expand(&self, beta_s: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(self.p_full);
        for (k, &j) in self.index_map.iter().enumerate() {
            out[j] = beta_s[k];
        }
        out
    }
}

/// Second-stage estimates.
#[derive(Debug, Clone)]
pub struct StageFit<T: Scalar> {
    /// Full-length coefficient vector (zeros off `Ŝ`).
    pub beta: DVector<T>,
    pub theta: DVector<T>,
    pub sigma2: T,
    pub cov: CovStructure,
    /// Maximized criterion (ML or REML log-likelihood).
    pub value: T,
    pub converged: bool,
}

impl<T: Scalar> StageFit<T> {
    pub fn params(&self) -> Result<ModelParams<T>> {
        ModelParams::new(self.beta.clone(), self.theta.clone(), self.sigma2, self.cov)
    }
}

fn to_stage<T: Scalar>(vf: VarianceFit<T>, beta: DVector<T>, cov: CovStructure) -> StageFit<T> {
    StageFit { beta, theta: vf.theta, sigma2: vf.sigma2, cov, value: vf.value, converged: vf.converged }
}

/// `(θ̂, σ̂²)` maximizing the likelihood of `r̂ = y − Xβ̂` under `r̂ = Zb + ε`.
pub fn fit_pfgmme_eta<T: Scalar>(ds: &GroupedDataset<T>, beta_hat: &DVector<T>, cov: CovStructure) -> Result<StageFit<T>> {
    let vf = varcomp::maximize(ds, cov, Criterion::Residual, Some(beta_hat), None)?;
    Ok(to_stage(vf, beta_hat.clone(), cov))
}

fn refit<T: Scalar>(reduced: &ReducedModel<T>, cov: CovStructure, criterion: Criterion) -> Result<StageFit<T>> {
    let vf = varcomp::maximize(&reduced.data, cov, criterion, None, None)?;
    let beta = reduced.expand(&vf.beta);
    Ok(to_stage(vf, beta, cov))
}

/// Joint ML on the reduced model, with `β` profiled out by GLS.
pub fn fit_2mle<T: Scalar>(reduced: &ReducedModel<T>, cov: CovStructure) -> Result<StageFit<T>> {
    refit(reduced, cov, Criterion::ProfiledMl)
}

/// REML on the reduced model; `β` is the GLS estimate at the REML `η`.
pub fn fit_2reml<T: Scalar>(reduced: &ReducedModel<T>, cov: CovStructure) -> Result<StageFit<T>> {
    refit(reduced, cov, Criterion::ProfiledReml)
}

/// `b̂_i = Ψ Z_iᵀ (σ²V_i)⁻¹ (y_i − X_iβ)`.
pub fn blup<T: Scalar>(ds: &GroupedDataset<T>, params: &ModelParams<T>) -> Result<Vec<DVector<T>>> {
    params.validate()?;
    ds.check_beta(&params.beta)?;
    let psi = params.cov.psi_diag(&params.theta, ds.q())?;
    ds.groups()
        .iter()
        .enumerate()
        .map(|(gi, g)| {
            let chol = cholesky_group(group_covariance(&g.z, &psi, params.sigma2), gi)?;
            let r = &g.y - &g.x * &params.beta;
            Ok((g.z.transpose() * chol.solve(&r)).component_mul(&psi))
        })
        .collect()
}

/// `n⁻¹‖y − Xβ̂ − Zb̂‖²` with `b̂` the BLUP on the same data.
pub fn prediction_error<T: Scalar>(ds: &GroupedDataset<T>, params: &ModelParams<T>) -> Result<T> {
    let b = blup(ds, params)?;
    let mut acc = T::zero();
    for (g, bi) in ds.groups().iter().zip(&b) {
        acc += (&g.y - &g.x * &params.beta - &g.z * bi).norm_squared();
    }
    Ok(acc / T::from_count(ds.n()))
}
