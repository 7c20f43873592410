//! Comparison selectors: penalized maximum likelihood (MPLE) and profiled
//! penalized least squares with a proxy covariance (PLS), plus the score
//! diagnostic at the true parameters.

use crate::error::{Error, Result};
use crate::linalg::BlockDiag;
use crate::lmm::{cholesky_group, group_covariance, ActiveSet, CovStructure, GroupedDataset, ModelParams};
use crate::penalty::PenaltySpec;
use crate::pfgmm::{build_proxy_vz, ProxySpec};
use crate::scalar::Scalar;
use crate::varcomp::{self, Criterion};
use nalgebra::{DMatrix, DVector};

/// Estimated variance parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Eta<T: Scalar> {
    pub theta: DVector<T>,
    pub sigma2: T,
    pub cov: CovStructure,
}

impl<T: Scalar> Eta<T> {
    pub fn params(&self, beta: DVector<T>) -> Result<ModelParams<T>> {
        ModelParams::new(beta, self.theta.clone(), self.sigma2, self.cov)
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct FitResult<T: Scalar> {
    pub beta_hat: DVector<T>,
    pub active_set: ActiveSet,
    pub eta_hat: Option<Eta<T>>,
    pub objective: T,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each full sweep (outer iteration for MPLE).
    pub trace: Vec<T>,
    pub lambda: T,
    /// Largest KKT violation over the penalized coordinates.
    pub kkt_residual: T,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitOptions {
    pub kkt_tol: f64,
    pub max_iter: usize,
    pub zero_tol: f64,
    /// 0-based indices left unpenalized.
    pub unpenalized: Vec<usize>,
    /// Relative objective change that ends the iterations.
    pub rel_tol: f64,
    pub cov: CovStructure,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-6,
            max_iter: 500,
            zero_tol: 1e-8,
            unpenalized: vec![0, 1],
            rel_tol: 1e-8,
            cov: CovStructure::Diagonal,
        }
    }
}

impl FitOptions {
    pub(crate) fn check(&self, p: usize) -> Result<()> {
        if let Some(&j) = self.unpenalized.iter().find(|&&j| j >= p) {
            return Err(Error::InvalidParameter(format!("unpenalized index {j} outside 0..{p}")));
        }
        if !(self.zero_tol >= 0.0) || !(self.kkt_tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter("invalid fit options".into()));
        }
        Ok(())
    }
}

/// State of a coordinate-descent solve of `½n⁻¹‖y − Xβ‖² + Σ P(|β_j|)`.
pub(crate) struct CdOutcome<T: Scalar> {
    pub beta: DVector<T>,
    pub objective: T,
    pub sweeps: usize,
    pub converged: bool,
    pub trace: Vec<T>,
    pub kkt: T,
}

/// Penalty used inside one coordinate-descent run: the exact folded-concave
/// penalty, or its local linear approximation `Σ w_j|β_j|` with weights
/// `w_j = P'(|β̃_j|)` frozen at a reference point `β̃`.
#[derive(Clone, Copy)]
pub(crate) enum CdPenalty<'a, T: Scalar> {
    Exact(&'a PenaltySpec<T>),
    Weighted(&'a [T]),
}

impl<T: Scalar> CdPenalty<'_, T> {
    fn total(&self, beta: &DVector<T>, unpen: &[usize]) -> T {
        match self {
            CdPenalty::Exact(pen) => pen.total(beta.as_slice(), unpen),
            CdPenalty::Weighted(w) => beta
                .iter()
                .enumerate()
                .filter(|(j, _)| !unpen.contains(j))
                .fold(T::zero(), |acc, (j, b)| acc + w[j] * b.abs()),
        }
    }

    fn threshold(&self, j: usize, kappa: T, z: T) -> T {
        match self {
            CdPenalty::Exact(pen) => pen.threshold(kappa, z),
            CdPenalty::Weighted(w) => {
                let m = (kappa * z.abs() - w[j]).max(T::zero()) / kappa;
                m * z.signum()
            }
        }
    }

    fn slope_at_zero(&self, j: usize) -> T {
        match self {
            CdPenalty::Exact(pen) => pen.deriv_at_zero_plus(),
            CdPenalty::Weighted(w) => w[j],
        }
    }

    fn slope(&self, j: usize, b: T) -> T {
        match self {
            CdPenalty::Exact(pen) => pen.deriv_unchecked(b.abs()),
            CdPenalty::Weighted(w) => w[j],
        }
    }
}

fn ls_objective<T: Scalar>(r: &DVector<T>, beta: &DVector<T>, pen: CdPenalty<'_, T>, unpen: &[usize]) -> T {
    r.norm_squared() * T::lit(0.5) / T::from_count(r.len()) + pen.total(beta, unpen)
}

/// Largest KKT violation of the penalized least-squares problem.
pub(crate) fn ls_kkt<T: Scalar>(
    x: &DMatrix<T>,
    r: &DVector<T>,
    beta: &DVector<T>,
    pen: CdPenalty<'_, T>,
    unpen: &[usize],
) -> T {
    let n = T::from_count(x.nrows());
    let mut worst = T::zero();
    for j in 0..x.ncols() {
        let g = x.column(j).dot(r) / n;
        let b = beta[j];
        let v = if unpen.contains(&j) {
            g.abs()
        } else if b == T::zero() {
            (g.abs() - pen.slope_at_zero(j)).max(T::zero())
        } else {
            (g - b.signum() * pen.slope(j, b)).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Cyclic coordinate descent with exact univariate minimization. Full
/// sweeps alternate with inner passes over the current nonzero coordinates
/// until a full sweep leaves the support unchanged.
pub(crate) fn penalized_ls_cd<T: Scalar>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    pen: CdPenalty<'_, T>,
    opts: &FitOptions,
    init: DVector<T>,
) -> CdOutcome<T> {
    let n = T::from_count(x.nrows());
    let p = x.ncols();
    let kappa: Vec<T> = (0..p).map(|j| x.column(j).norm_squared() / n).collect();
    let unpen = &opts.unpenalized;
    let is_unpen: Vec<bool> = (0..p).map(|j| unpen.contains(&j)).collect();
    let mut beta = init;
    let mut r = y - x * &beta;
    let mut obj = ls_objective(&r, &beta, pen, unpen);
    let mut trace = vec![obj];
    let rel_tol = T::lit(opts.rel_tol);
    let kkt_tol = T::lit(opts.kkt_tol);
    let zero_tol = T::lit(opts.zero_tol);
    let mut converged = false;
    let mut sweeps = 0;
    let mut kkt = ls_kkt(x, &r, &beta, pen, unpen);
    let update = |j: usize, beta: &mut DVector<T>, r: &mut DVector<T>| -> bool {
        if kappa[j] == T::zero() {
            return false;
        }
        let col = x.column(j);
        let old = beta[j];
        let z = old + col.dot(r) / (n * kappa[j]);
        let mut new = if is_unpen[j] { z } else { pen.threshold(j, kappa[j], z) };
        if !is_unpen[j] && new.abs() <= zero_tol {
            new = T::zero();
        }
        if new != old {
            r.axpy(old - new, &col, T::one());
            beta[j] = new;
        }
        (old == T::zero()) != (new == T::zero())
    };
    while sweeps < opts.max_iter {
        sweeps += 1;
        let mut support_changed = false;
        for j in 0..p {
            support_changed |= update(j, &mut beta, &mut r);
        }
        // inner passes over the active coordinates
        let mut inner_prev = ls_objective(&r, &beta, pen, unpen);
        for _ in 0..opts.max_iter {
            let active: Vec<usize> = (0..p).filter(|&j| beta[j] != T::zero() || is_unpen[j]).collect();
            for &j in &active {
                update(j, &mut beta, &mut r);
            }
            let cur = ls_objective(&r, &beta, pen, unpen);
            let done = (inner_prev - cur).abs() <= rel_tol * inner_prev.abs().max(T::lit(1e-12)) * T::lit(0.01);
            inner_prev = cur;
            if done {
                break;
            }
        }
        let next = inner_prev;
        let change = (obj - next).abs() / obj.abs().max(T::lit(1e-12));
        obj = next;
        trace.push(obj);
        kkt = ls_kkt(x, &r, &beta, pen, unpen);
        if !support_changed && change < rel_tol && kkt <= kkt_tol {
            converged = true;
            break;
        }
    }
    CdOutcome { beta, objective: obj, sweeps, converged, trace, kkt }
}

fn whiten<T: Scalar>(ds: &GroupedDataset<T>, eta: &Eta<T>) -> Result<(DMatrix<T>, DVector<T>)> {
    let psi = eta.cov.psi_diag(&eta.theta, ds.q())?;
    let mut x = DMatrix::<T>::zeros(ds.n(), ds.p());
    let mut y = DVector::<T>::zeros(ds.n());
    let mut row = 0;
    for (gi, g) in ds.groups().iter().enumerate() {
        let chol = cholesky_group(group_covariance(&g.z, &psi, eta.sigma2), gi)?;
        let l = chol.l();
        let xi = l
            .solve_lower_triangular(&g.x)
            .ok_or(Error::SingularGroup { group: gi })?;
        let yi = l
            .solve_lower_triangular(&g.y)
            .ok_or(Error::SingularGroup { group: gi })?;
        x.rows_mut(row, g.len()).copy_from(&xi);
        y.rows_mut(row, g.len()).copy_from(&yi);
        row += g.len();
    }
    Ok((x, y))
}

/// Least squares restricted to the unpenalized columns; the rest stay zero.
fn unpenalized_start<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>, unpen: &[usize]) -> DVector<T> {
    let mut beta = DVector::zeros(x.ncols());
    if unpen.is_empty() {
        return beta;
    }
    let xu = x.select_columns(unpen);
    if let Some(chol) = (xu.transpose() * &xu).cholesky() {
        let b = chol.solve(&(xu.transpose() * y));
        for (k, &j) in unpen.iter().enumerate() {
            beta[j] = b[k];
        }
    }
    beta
}

fn mple_objective<T: Scalar>(
    ds: &GroupedDataset<T>,
    beta: &DVector<T>,
    eta: &Eta<T>,
    pen: &PenaltySpec<T>,
    unpen: &[usize],
) -> Result<T> {
    let ll = crate::lmm::log_likelihood(ds, &eta.params(beta.clone())?)?;
    Ok(-ll / T::from_count(ds.n()) + pen.total(beta.as_slice(), unpen))
}

/// LLA weights `P'(|β_j|)`, with `P'(0⁺)` at zero; unpenalized entries are
/// never read.
fn lla_weights<T: Scalar>(pen: &PenaltySpec<T>, beta: &DVector<T>, unpen: &[usize]) -> Vec<T> {
    beta.iter()
        .enumerate()
        .map(|(j, b)| {
            if unpen.contains(&j) {
                T::zero()
            } else if *b == T::zero() {
                pen.deriv_at_zero_plus()
            } else {
                pen.deriv_unchecked(b.abs())
            }
        })
        .collect()
}

/// Warm-start state for [`fit_mple_from`].
#[derive(Debug, Clone)]
pub struct MpleStart<T: Scalar> {
    pub beta: DVector<T>,
    pub eta: Eta<T>,
}

/// Penalized maximum likelihood: minimizes `−n⁻¹l_n(β, η) + Σ P_λ(|β_j|)` by
/// alternating a whitened coordinate-descent step in `β` on the local linear
/// approximation of the penalty with a quasi-Newton step in `η`. Both steps
/// majorize-minimize, so the objective is nonincreasing.
/// MPLE started from [`mple_pilot`] with the same penalty.
pub fn fit_mple<T: Scalar>(ds: &GroupedDataset<T>, pen: &PenaltySpec<T>, opts: &FitOptions) -> Result<FitResult<T>> {
    let start = mple_pilot(ds, pen, opts)?;
    fit_mple_from(ds, pen, opts, Some(start))
}

/// Pilot start for MPLE: PLS with the `log n` proxy, then residual ML for
/// the variance parameters at that `β`. Starting from the OLS residual
/// variance instead lets the random effects absorb the fixed-effect signal
/// and the alternation stalls at the unpenalized fit.
pub fn mple_pilot<T: Scalar>(ds: &GroupedDataset<T>, pen: &PenaltySpec<T>, opts: &FitOptions) -> Result<MpleStart<T>> {
    let pls = fit_pls(ds, pen, &ProxySpec::LogNIdentity, opts)?;
    let vf = varcomp::maximize(ds, opts.cov, Criterion::Residual, Some(&pls.beta_hat), None)?;
    Ok(MpleStart { beta: pls.beta_hat, eta: Eta { theta: vf.theta, sigma2: vf.sigma2, cov: opts.cov } })
}

pub fn fit_mple_from<T: Scalar>(
    ds: &GroupedDataset<T>,
    pen: &PenaltySpec<T>,
    opts: &FitOptions,
    start: Option<MpleStart<T>>,
) -> Result<FitResult<T>> {
    mple_alternate(ds, pen, opts, start, usize::MAX)
}

/// The alternation behind [`fit_mple_from`]; gives up (unconverged) as soon
/// as a `β`-step selects more than `max_active` coordinates.
fn mple_alternate<T: Scalar>(
    ds: &GroupedDataset<T>,
    pen: &PenaltySpec<T>,
    opts: &FitOptions,
    start: Option<MpleStart<T>>,
    max_active: usize,
) -> Result<FitResult<T>> {
    opts.check(ds.p())?;
    let unpen = &opts.unpenalized;
    let qs = opts.cov.num_params(ds.q());
    let (mut beta, mut eta) = match start {
        Some(s) => (s.beta, s.eta),
        None => {
            let beta = unpenalized_start(&ds.stacked_x(), &ds.stacked_y(), unpen);
            let r = ds.stacked_y() - ds.stacked_x() * &beta;
            let e = varcomp::default_start(&r, qs);
            (beta, Eta { theta: e.rows(0, qs).into_owned(), sigma2: e[qs], cov: opts.cov })
        }
    };
    let mut obj = mple_objective(ds, &beta, &eta, pen, unpen)?;
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    let mut kkt = T::zero();
    let outer_max = opts.max_iter.min(50);
    let rel_tol = T::lit(opts.rel_tol);
    while iterations < outer_max {
        iterations += 1;
        let (xw, yw) = whiten(ds, &eta)?;
        let cd = penalized_ls_cd(&xw, &yw, CdPenalty::Weighted(&lla_weights(pen, &beta, unpen)), opts, beta.clone());
        beta = cd.beta;
        kkt = cd.kkt;
        if beta.iter().filter(|b| **b != T::zero()).count() > max_active {
            obj = mple_objective(ds, &beta, &eta, pen, unpen)?;
            trace.push(obj);
            break;
        }
        let start = eta.theta.clone().insert_row(qs, eta.sigma2);
        let vf = varcomp::maximize(ds, opts.cov, Criterion::Residual, Some(&beta), Some(start))?;
        let candidate = Eta { theta: vf.theta, sigma2: vf.sigma2, cov: opts.cov };
        let next = mple_objective(ds, &beta, &candidate, pen, unpen)?;
        // the η-step must not increase the objective
        let next = if next <= mple_objective(ds, &beta, &eta, pen, unpen)? {
            eta = candidate;
            next
        } else {
            mple_objective(ds, &beta, &eta, pen, unpen)?
        };
        let change = (obj - next).abs() / obj.abs().max(T::one());
        obj = next;
        trace.push(obj);
        if change < rel_tol && cd.converged {
            // KKT at the final η
            let (xw, yw) = whiten(ds, &eta)?;
            let r = &yw - &xw * &beta;
            kkt = ls_kkt(&xw, &r, &beta, CdPenalty::Exact(pen), unpen);
            converged = kkt <= T::lit(opts.kkt_tol);
            if converged {
                break;
            }
        }
    }
    Ok(FitResult {
        active_set: ActiveSet::from_beta(&beta, T::lit(opts.zero_tol)),
        beta_hat: beta,
        eta_hat: Some(eta),
        objective: obj,
        iterations,
        converged,
        trace,
        lambda: pen.lambda(),
        kkt_residual: kkt,
    })
}

/// `BIC(λ) = −2 l_n(β̂, η̂) + (|Ŝ| + 1) log n`.
pub fn bic_value<T: Scalar>(ds: &GroupedDataset<T>, fit: &FitResult<T>) -> Result<T> {
    let eta = fit
        .eta_hat
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("BIC needs estimated variance parameters".into()))?;
    let ll = crate::lmm::log_likelihood(ds, &eta.params(fit.beta_hat.clone())?)?;
    Ok(crate::select::bic_from_loglik(ll, fit.active_set.len(), ds.n()))
}

/// ML fit with every penalized coefficient at zero: the MPLE for `λ` above
/// the null KKT threshold.
pub fn mple_null<T: Scalar>(ds: &GroupedDataset<T>, opts: &FitOptions) -> Result<MpleStart<T>> {
    let unpen = &opts.unpenalized;
    let vf = varcomp::maximize(&ds.select_columns(unpen)?, opts.cov, Criterion::ProfiledMl, None, None)?;
    let mut beta = DVector::zeros(ds.p());
    for (k, &j) in unpen.iter().enumerate() {
        beta[j] = vf.beta[k];
    }
    Ok(MpleStart { beta, eta: Eta { theta: vf.theta, sigma2: vf.sigma2, cov: opts.cov } })
}

/// Largest whitened score `|x̃_jᵀr̃|/n` over penalized `j` at `(β, η)`.
fn whitened_score_max<T: Scalar>(ds: &GroupedDataset<T>, beta: &DVector<T>, eta: &Eta<T>, unpen: &[usize]) -> Result<T> {
    let (xw, yw) = whiten(ds, eta)?;
    let rw = &yw - &xw * beta;
    let n = T::from_count(ds.n());
    Ok((0..ds.p())
        .filter(|j| !unpen.contains(j))
        .map(|j| (xw.column(j).dot(&rw) / n).abs())
        .fold(T::zero(), |m, v| m.max(v)))
}

/// Log-spaced descending `λ` grid for MPLE. The whitened score scales like
/// `1/σ²`, so the useful range depends on which variance regime a fit lands
/// in. The grid spans two anchors: the largest whitened score at the null
/// fit (ML with only the unpenalized columns; large `σ²`, small score) and
/// at the unpenalized `β` whitened with the pilot `η` of [`mple_pilot`]
/// (small `σ²`, large score).
pub fn mple_lambda_grid<T: Scalar>(ds: &GroupedDataset<T>, pilot: &PenaltySpec<T>, opts: &FitOptions, len: usize) -> Result<Vec<T>> {
    opts.check(ds.p())?;
    let unpen = &opts.unpenalized;
    let null = mple_null(ds, opts)?;
    let a = whitened_score_max(ds, &null.beta, &null.eta, unpen)?;
    let b = whitened_score_max(ds, &null.beta, &mple_pilot(ds, pilot, opts)?.eta, unpen)?;
    let (lo, hi) = (a.min(b), a.max(b));
    if !(lo > T::zero()) {
        return Err(Error::InvalidParameter("no penalized signal to build a lambda grid".into()));
    }
    Ok(crate::select::log_grid(hi, lo, len))
}

/// MPLE over a descending `λ` grid with warm starts; returns the BIC-optimal
/// fit and the BIC path. Every grid point starts from the pilot
/// ([`mple_pilot`] with `pen`), so the path does not depend on the order of
/// the grid. The path stops once more than `max_active`
/// coordinates are selected: below that point the penalized likelihood
/// drifts toward the degenerate interpolating solution with `σ² → 0`.
pub fn fit_mple_bic<T: Scalar>(
    ds: &GroupedDataset<T>,
    pen: &PenaltySpec<T>,
    opts: &FitOptions,
    grid: &[T],
    max_active: usize,
) -> Result<(FitResult<T>, Vec<(T, T)>)> {
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| b.partial_cmp(a).expect("finite lambda grid"));
    opts.check(ds.p())?;
    let pilot = mple_pilot(ds, pen, opts)?;
    let mut best: Option<(T, FitResult<T>)> = None;
    let mut path = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        let pl = pen.with_lambda(lambda)?;
        let fit = mple_alternate(ds, &pl, opts, Some(pilot.clone()), max_active)?;
        if fit.active_set.len() > max_active {
            break;
        }
        let b = bic_value(ds, &fit)?;
        path.push((lambda, b));
        if best.as_ref().is_none_or(|(bb, _)| b < *bb) {
            best = Some((b, fit));
        }
    }
    let (_, fit) = best.ok_or_else(|| Error::InvalidParameter("empty lambda grid".into()))?;
    Ok((fit, path))
}

/// Profiled penalized least squares on `(Ṽ_z^{-1/2}y, Ṽ_z^{-1/2}X)`.
/// Variance parameters are not estimated.
pub fn fit_pls<T: Scalar>(
    ds: &GroupedDataset<T>,
    pen: &PenaltySpec<T>,
    proxy: &ProxySpec<T>,
    opts: &FitOptions,
) -> Result<FitResult<T>> {
    let prox = build_proxy_vz(ds, proxy)?;
    fit_pls_transformed(&prox.inv_sqrt, ds, pen, opts)
}

pub(crate) fn fit_pls_transformed<T: Scalar>(
    inv_sqrt: &BlockDiag<T>,
    ds: &GroupedDataset<T>,
    pen: &PenaltySpec<T>,
    opts: &FitOptions,
) -> Result<FitResult<T>> {
    opts.check(ds.p())?;
    let x = inv_sqrt.mul_mat(&ds.stacked_x())?;
    let y = inv_sqrt.mul_vec(&ds.stacked_y())?;
    let init = unpenalized_start(&x, &y, &opts.unpenalized);
    let cd = penalized_ls_cd(&x, &y, CdPenalty::Exact(pen), opts, init);
    Ok(FitResult {
        active_set: ActiveSet::from_beta(&cd.beta, T::lit(opts.zero_tol)),
        beta_hat: cd.beta,
        eta_hat: None,
        objective: cd.objective,
        iterations: cd.sweeps,
        converged: cd.converged,
        trace: cd.trace,
        lambda: pen.lambda(),
        kkt_residual: cd.kkt,
    })
}

/// `|(y − Xβ₀)ᵀ (σ²V)⁻¹ X_k| / n`, the scaled score of `−l_n` in `β_k` at
/// the true parameters.
pub fn gradient_at_truth<T: Scalar>(ds: &GroupedDataset<T>, params0: &ModelParams<T>, k: usize) -> Result<T> {
    if k >= ds.p() {
        return Err(Error::Dimension(format!("coordinate {k} outside 0..{}", ds.p())));
    }
    params0.validate()?;
    ds.check_beta(&params0.beta)?;
    let psi = params0.cov.psi_diag(&params0.theta, ds.q())?;
    let mut acc = T::zero();
    for (gi, g) in ds.groups().iter().enumerate() {
        let chol = cholesky_group(group_covariance(&g.z, &psi, params0.sigma2), gi)?;
        let r = &g.y - &g.x * &params0.beta;
        acc += chol.solve(&r).dot(&g.x.column(k));
    }
    Ok((acc / T::from_count(ds.n())).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmm::tests::random_dataset;
    use crate::lmm::{Group, GroupedDataset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn opts(unpen: Vec<usize>) -> FitOptions {
        FitOptions { unpenalized: unpen, ..FitOptions::default() }
    }

    #[test]
    fn cd_matches_soft_threshold_on_orthogonal_design() {
        // orthonormal columns scaled so that ‖x_j‖²/n = 1
        let n = 4;
        let x = DMatrix::from_row_slice(n, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0]);
        let y = DVector::from_vec(vec![2.0, 1.0, 0.3, -0.1]);
        let pen = PenaltySpec::l1(0.1).unwrap();
        let out = penalized_ls_cd(&x, &y, CdPenalty::Exact(&pen), &opts(vec![]), DVector::zeros(2));
        for j in 0..2 {
            let z = x.column(j).dot(&y) / n as f64;
            let soft = z.signum() * (z.abs() - 0.1).max(0.0);
            assert!((out.beta[j] - soft).abs() < 1e-12);
        }
        assert!(out.converged);
    }

    #[test]
    fn pls_with_identity_proxy_is_plain_penalized_ls() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ds = random_dataset(&mut rng, &[5, 5, 5, 5], 4, 2);
        let pen = PenaltySpec::scad(0.05).unwrap();
        let o = opts(vec![0]);
        let a = fit_pls(&ds, &pen, &ProxySpec::Custom(DMatrix::zeros(2, 2)), &o).unwrap();
        let cd = penalized_ls_cd(&ds.stacked_x(), &ds.stacked_y(), CdPenalty::Exact(&pen), &o, unpenalized_start(&ds.stacked_x(), &ds.stacked_y(), &[0]));
        assert!((a.beta_hat - cd.beta).amax() < 1e-12);
        assert!(a.eta_hat.is_none());
    }

    #[test]
    fn traces_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ds = random_dataset(&mut rng, &[6; 8], 12, 2);
        let pen = PenaltySpec::scad(0.05).unwrap();
        for fit in [
            fit_pls(&ds, &pen, &ProxySpec::LogNIdentity, &opts(vec![0, 1])).unwrap(),
            fit_mple(&ds, &pen, &opts(vec![0, 1])).unwrap(),
        ] {
            for w in fit.trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-10, "{:?}", fit.trace);
            }
        }
    }

    fn two_covariate_data(rng: &mut ChaCha8Rng) -> GroupedDataset<f64> {
        let groups = (0..8)
            .map(|_| {
                let x = DMatrix::from_fn(5, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
                let z = DMatrix::from_element(5, 1, 1.0);
                let b: f64 = 0.7 * rng.sample::<f64, _>(StandardNormal);
                let y = DVector::from_fn(5, |i, _| 1.2 * x[(i, 0)] + 0.05 * x[(i, 1)] + b + 0.5 * rng.sample::<f64, _>(StandardNormal));
                Group { y, x, z }
            })
            .collect();
        GroupedDataset::new(groups).unwrap()
    }

    #[test]
    fn mple_matches_lattice_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ds = two_covariate_data(&mut rng);
        let pen = PenaltySpec::scad(0.08).unwrap();
        let o = FitOptions { unpenalized: vec![], ..FitOptions::default() };
        let fit = fit_mple(&ds, &pen, &o).unwrap();
        assert!(fit.converged);
        // Q(β) with η profiled out
        let q = |b0: f64, b1: f64| {
            let beta = DVector::from_vec(vec![b0, b1]);
            let vf = varcomp::maximize(&ds, CovStructure::Diagonal, Criterion::Residual, Some(&beta), None).unwrap();
            -vf.value / ds.n() as f64 + pen.total(beta.as_slice(), &[])
        };
        let (mut best, mut arg) = (f64::INFINITY, (0.0, 0.0));
        for i in 0..=40 {
            for j in 0..=40 {
                let (b0, b1) = (0.6 + 0.03 * i as f64, -0.3 + 0.015 * j as f64);
                let v = q(b0, b1);
                if v < best {
                    best = v;
                    arg = (b0, b1);
                }
            }
        }
        // the exact zero is always a lattice candidate for the sparse coordinate
        for i in 0..=40 {
            let b0 = 0.6 + 0.03 * i as f64;
            let v = q(b0, 0.0);
            if v < best {
                best = v;
                arg = (b0, 0.0);
            }
        }
        assert!(fit.objective <= best + 1e-9, "{} vs {best}", fit.objective);
        assert!((fit.beta_hat[0] - arg.0).abs() <= 0.03 && (fit.beta_hat[1] - arg.1).abs() <= 0.015, "{:?} vs {arg:?}", fit.beta_hat);
    }

    #[test]
    fn mple_noiseless_recovers_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ds = random_dataset(&mut rng, &[6; 10], 6, 2);
        let beta0 = DVector::from_vec(vec![1.0, 0.0, 2.0, 0.0, -1.5, 0.0]);
        let ys = ds.groups().iter().map(|g| &g.x * &beta0).collect();
        ds = ds.with_responses(ys).unwrap();
        let fit = fit_mple(&ds, &PenaltySpec::scad(0.01).unwrap(), &opts(vec![])).unwrap();
        for j in [0, 2, 4] {
            assert!((fit.beta_hat[j] - beta0[j]).abs() < 1e-4, "{:?}", fit.beta_hat);
        }
    }

    #[test]
    fn gradient_at_truth_with_identity_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ds = random_dataset(&mut rng, &[4, 4, 4], 3, 2);
        let beta = DVector::from_vec(vec![0.2, 0.1, -0.3]);
        let params = ModelParams::new(beta.clone(), DVector::zeros(2), 0.5, CovStructure::Diagonal).unwrap();
        let r = ds.stacked_y() - ds.stacked_x() * &beta;
        let direct = (r.dot(&ds.stacked_x().column(1)) / (12.0 * 0.5)).abs();
        assert!((gradient_at_truth(&ds, &params, 1).unwrap() - direct).abs() < 1e-12);
        assert!(gradient_at_truth(&ds, &params, 3).is_err());
    }
}
