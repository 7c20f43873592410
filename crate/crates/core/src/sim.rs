//! Simulation design with optional endogeneity, replication runner and
//! summary metrics.

use crate::baselines::{fit_mple_bic, fit_mple, fit_pls, FitOptions, FitResult};
use crate::error::{Error, Result};
use crate::lmm::{ActiveSet, CovStructure, Group, GroupedDataset, ModelParams};
use crate::penalty::PenaltySpec;
use crate::pfgmm::{asymptotic_diag, InstrumentSource, PfgmmOptions, PfgmmProblem, ProxySpec};
use crate::second_stage::{fit_2mle, fit_2reml, fit_pfgmme_eta, prediction_error, ReducedModel, StageFit};
use crate::select::{exbic, LambdaPolicy, AUTO_GRID_LEN};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Endogenous covariate set (indices are 1-based in the configuration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndoSet {
    Set1,
    Set2,
    Set3,
    Set4,
    Custom(Vec<usize>),
}

impl EndoSet {
    /// 0-based column indices for a design with `p` columns.
    pub fn indices(&self, p: usize) -> Result<Vec<usize>> {
        let one_based: Vec<usize> = match self {
            EndoSet::Set1 => (6..=15).collect(),
            EndoSet::Set2 => (5..=15).collect(),
            EndoSet::Set3 => std::iter::once(2).chain(6..=15).collect(),
            EndoSet::Set4 => (6..=p).collect(),
            EndoSet::Custom(v) => v.clone(),
        };
        if let Some(&bad) = one_based.iter().find(|&&j| j == 0 || j > p) {
            return Err(Error::InvalidParameter(format!("endogenous column {bad} outside 1..={p}")));
        }
        Ok(one_based.into_iter().map(|j| j - 1).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Endogeneity {
    None,
    /// `X_ij ← (X_ij + 1)(ρ_e ε_ij + 1)`.
    Level1 { rho_e: f64, set: EndoSet },
    /// `X_ij ← (X_ij + 1)(ρ_b b_i1 + 1)`.
    Level2Intercept { rho_b: f64, set: EndoSet },
    /// `X_ij ← (X_ij + 1)(ρ_b b_i2 + 1)`.
    Level2Slope { rho_b: f64, set: EndoSet },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub groups: usize,
    pub group_size: usize,
    pub p: usize,
    pub q: usize,
    pub s: usize,
    pub beta0: Vec<f64>,
    /// Random-effect variances.
    pub theta0: Vec<f64>,
    pub sigma2_0: f64,
    /// AR(1) correlation among covariates 2..p.
    pub rho: f64,
    pub endo: Endogeneity,
    pub seed: u64,
    pub reps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            groups: 25,
            group_size: 6,
            p: 300,
            q: 2,
            s: 5,
            beta0: vec![1.0, 2.0, 4.0, 3.0, 3.0],
            theta0: vec![0.56, 0.56],
            sigma2_0: 0.25,
            rho: 0.5,
            endo: Endogeneity::None,
            seed: 1,
            reps: 100,
        }
    }
}

impl SimConfig {
    pub fn n(&self) -> usize {
        self.groups * self.group_size
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.groups == 0 || self.group_size == 0 || self.reps == 0 {
            return bad("groups, group_size and reps must be positive");
        }
        if self.q == 0 || self.q > self.p || self.p < 2 {
            return bad("need 1 <= q <= p and p >= 2");
        }
        if self.beta0.len() > self.p || self.s != self.beta0.iter().filter(|b| **b != 0.0).count() {
            return bad("beta0 must have at most p entries and exactly s nonzeros");
        }
        if self.theta0.len() != self.q || self.theta0.iter().any(|t| !(*t >= 0.0)) {
            return bad("theta0 must hold q nonnegative variances");
        }
        if !(self.sigma2_0 > 0.0) || !(self.rho.abs() < 1.0) {
            return bad("need sigma2_0 > 0 and |rho| < 1");
        }
        match &self.endo {
            Endogeneity::None => {}
            Endogeneity::Level1 { set, .. } => {
                set.indices(self.p)?;
            }
            Endogeneity::Level2Intercept { set, .. } | Endogeneity::Level2Slope { set, .. } => {
                set.indices(self.p)?;
                let k = if matches!(self.endo, Endogeneity::Level2Slope { .. }) { 2 } else { 1 };
                if k > self.q {
                    return bad("level-2 endogeneity references a missing random effect");
                }
            }
        }
        Ok(())
    }

    pub fn beta0_full(&self) -> DVector<f64> {
        let mut b = DVector::zeros(self.p);
        for (j, v) in self.beta0.iter().enumerate() {
            b[j] = *v;
        }
        b
    }

    pub fn true_support(&self) -> ActiveSet {
        ActiveSet::from_beta(&self.beta0_full(), 0.0)
    }

    pub fn true_params(&self) -> ModelParams<f64> {
        ModelParams {
            beta: self.beta0_full(),
            theta: DVector::from_vec(self.theta0.clone()),
            sigma2: self.sigma2_0,
            cov: CovStructure::Diagonal,
        }
    }
}

/// Generated data plus the latent draws used to build it.
#[derive(Debug, Clone)]
pub struct SimData {
    pub ds: GroupedDataset<f64>,
    pub eps: Vec<DVector<f64>>,
    pub b: Vec<DVector<f64>>,
    pub beta0: DVector<f64>,
}

fn rep_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

fn assemble(x: Vec<DMatrix<f64>>, q: usize, beta0: &DVector<f64>, b: &[DVector<f64>], eps: &[DVector<f64>]) -> Result<GroupedDataset<f64>> {
    let groups = x
        .into_iter()
        .enumerate()
        .map(|(i, xi)| {
            let zi = xi.columns(0, q).into_owned();
            let y = &xi * beta0 + &zi * &b[i] + &eps[i];
            Group { y, x: xi, z: zi }
        })
        .collect();
    GroupedDataset::new(groups)
}

/// Draws one replication, deterministic in `(cfg.seed, rep)`. Endogeneity
/// is applied to `X` before `Z` and `y` are formed.
pub fn generate(cfg: &SimConfig, rep: u64) -> Result<SimData> {
    cfg.validate()?;
    let mut rng = rep_rng(cfg.seed, rep);
    let sd_innov = (1.0 - cfg.rho * cfg.rho).sqrt();
    let mut xs = Vec::with_capacity(cfg.groups);
    let mut bs = Vec::with_capacity(cfg.groups);
    let mut es = Vec::with_capacity(cfg.groups);
    for _ in 0..cfg.groups {
        let mut x = DMatrix::zeros(cfg.group_size, cfg.p);
        for r in 0..cfg.group_size {
            x[(r, 0)] = 1.0;
            // AR(1) recursion gives corr ρ^|i−j| with unit variances
            let mut prev: f64 = rng.sample(StandardNormal);
            x[(r, 1)] = prev;
            for c in 2..cfg.p {
                let e: f64 = rng.sample(StandardNormal);
                prev = cfg.rho * prev + sd_innov * e;
                x[(r, c)] = prev;
            }
        }
        let b = DVector::from_fn(cfg.q, |k, _| cfg.theta0[k].sqrt() * rng.sample::<f64, _>(StandardNormal));
        let e = DVector::from_fn(cfg.group_size, |_, _| cfg.sigma2_0.sqrt() * rng.sample::<f64, _>(StandardNormal));
        xs.push(x);
        bs.push(b);
        es.push(e);
    }
    let beta0 = cfg.beta0_full();
    match &cfg.endo {
        Endogeneity::None => {}
        Endogeneity::Level1 { rho_e, set } => apply_level1(&mut xs, &es, *rho_e, &set.indices(cfg.p)?),
        Endogeneity::Level2Intercept { rho_b, set } => apply_level2(&mut xs, &bs, *rho_b, &set.indices(cfg.p)?, 0),
        Endogeneity::Level2Slope { rho_b, set } => apply_level2(&mut xs, &bs, *rho_b, &set.indices(cfg.p)?, 1),
    }
    let ds = assemble(xs, cfg.q, &beta0, &bs, &es)?;
    Ok(SimData { ds, eps: es, b: bs, beta0 })
}

fn apply_level1(xs: &mut [DMatrix<f64>], eps: &[DVector<f64>], rho_e: f64, cols: &[usize]) {
    for (x, e) in xs.iter_mut().zip(eps) {
        for &c in cols {
            for r in 0..x.nrows() {
                x[(r, c)] = (x[(r, c)] + 1.0) * (rho_e * e[r] + 1.0);
            }
        }
    }
}

fn apply_level2(xs: &mut [DMatrix<f64>], bs: &[DVector<f64>], rho_b: f64, cols: &[usize], k: usize) {
    for (x, b) in xs.iter_mut().zip(bs) {
        for &c in cols {
            for r in 0..x.nrows() {
                x[(r, c)] = (x[(r, c)] + 1.0) * (rho_b * b[k] + 1.0);
            }
        }
    }
}

fn rebuild(sim: &SimData, xs: Vec<DMatrix<f64>>) -> Result<SimData> {
    let q = sim.ds.q();
    let ds = assemble(xs, q, &sim.beta0, &sim.b, &sim.eps)?;
    Ok(SimData { ds, ..sim.clone() })
}

/// Level-1 transform of an exogenous draw; `Z` and `y` are recomputed.
pub fn inject_level1(sim: &SimData, rho_e: f64, set: &EndoSet) -> Result<SimData> {
    let cols = set.indices(sim.ds.p())?;
    let mut xs: Vec<_> = sim.ds.groups().iter().map(|g| g.x.clone()).collect();
    apply_level1(&mut xs, &sim.eps, rho_e, &cols);
    rebuild(sim, xs)
}

/// Level-2 transform using random effect `which` (0 = intercept, 1 = slope).
pub fn inject_level2(sim: &SimData, rho_b: f64, set: &EndoSet, which: usize) -> Result<SimData> {
    let cols = set.indices(sim.ds.p())?;
    if which >= sim.ds.q() {
        return Err(Error::InvalidParameter(format!("random effect {which} does not exist")));
    }
    let mut xs: Vec<_> = sim.ds.groups().iter().map(|g| g.x.clone()).collect();
    apply_level2(&mut xs, &sim.b, rho_b, &cols, which);
    rebuild(sim, xs)
}

/// `ρσ / √(2ρ²σ² + 1)`: correlation between a transformed standard normal
/// covariate and the multiplier's normal component with standard deviation `σ`.
pub fn injected_correlation(rho: f64, sd: f64) -> f64 {
    rho * sd / (2.0 * rho * rho * sd * sd + 1.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Mple,
    Pls,
    Pfgmm,
    #[serde(rename = "pfgmm+2mle")]
    Pfgmm2Mle,
    #[serde(rename = "pfgmm+2reml")]
    Pfgmm2Reml,
}

impl Estimator {
    pub const ALL: [Estimator; 5] =
        [Estimator::Mple, Estimator::Pls, Estimator::Pfgmm, Estimator::Pfgmm2Mle, Estimator::Pfgmm2Reml];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Mple => "mple",
            Estimator::Pls => "pls",
            Estimator::Pfgmm => "pfgmm",
            Estimator::Pfgmm2Mle => "pfgmm+2mle",
            Estimator::Pfgmm2Reml => "pfgmm+2reml",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown estimator `{s}`")))
    }
}

/// Estimator settings shared by every replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySettings {
    /// Penalty family and shape; `λ` comes from the policies below.
    pub penalty: String,
    pub mple_lambda: LambdaPolicy,
    pub pls_lambda: LambdaPolicy,
    pub pfgmm_lambda: LambdaPolicy,
    pub fit: FitOptions,
    /// Compute sandwich standard errors for the PFGMM coefficients.
    pub standard_errors: bool,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            penalty: "scad:lambda=0.1,a=3.7".into(),
            mple_lambda: LambdaPolicy::Bic { grid: vec![] },
            pls_lambda: LambdaPolicy::Fixed { value: 0.1 },
            pfgmm_lambda: LambdaPolicy::Fixed { value: 0.1 },
            fit: FitOptions::default(),
            standard_errors: true,
        }
    }
}

/// Per-replication, per-estimator summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepSummary {
    pub rep: u64,
    pub estimator: Estimator,
    pub active_size: usize,
    pub true_positives: usize,
    pub pe: f64,
    /// Estimates of the first `s` coefficients.
    pub beta_s: Vec<f64>,
    /// Mean estimate over coefficients `s+1..p`.
    pub beta_n: f64,
    pub sigma2: f64,
    pub theta: Vec<f64>,
    pub lambda: f64,
    pub converged: bool,
    /// Sandwich standard errors for the first `s` coefficients (PFGMM only).
    pub se_s: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub rep: u64,
    pub estimator: Estimator,
    pub message: String,
}

/// Summary of one fit against the truth.
#[allow(clippy::too_many_arguments)]
pub fn metrics(
    rep: u64,
    estimator: Estimator,
    ds: &GroupedDataset<f64>,
    fit_beta: &DVector<f64>,
    eta: (&DVector<f64>, f64),
    truth: &ActiveSet,
    s: usize,
    lambda: f64,
    converged: bool,
) -> Result<RepSummary> {
    let active = ActiveSet::from_beta(fit_beta, 0.0);
    let params = ModelParams::new(fit_beta.clone(), eta.0.clone(), eta.1, CovStructure::Diagonal)?;
    let pe = prediction_error(ds, &params)?;
    let p = fit_beta.len();
    let beta_n = if p > s { fit_beta.rows(s, p - s).mean() } else { 0.0 };
    Ok(RepSummary {
        rep,
        estimator,
        active_size: active.len(),
        true_positives: active.intersection_size(truth),
        pe,
        beta_s: fit_beta.rows(0, s.min(p)).iter().copied().collect(),
        beta_n,
        sigma2: eta.1,
        theta: eta.0.iter().copied().collect(),
        lambda,
        converged,
        se_s: None,
    })
}

fn penalty_with(settings: &StudySettings, lambda: f64) -> Result<PenaltySpec<f64>> {
    settings.penalty.parse::<PenaltySpec<f64>>()?.with_lambda(lambda)
}

fn fixed_lambda(policy: &LambdaPolicy) -> Option<f64> {
    match policy {
        LambdaPolicy::Fixed { value } => Some(*value),
        _ => None,
    }
}

fn run_mple(ds: &GroupedDataset<f64>, st: &StudySettings) -> Result<FitResult<f64>> {
    match &st.mple_lambda {
        LambdaPolicy::Fixed { value } => fit_mple(ds, &penalty_with(st, *value)?, &st.fit),
        LambdaPolicy::Bic { grid } => {
            let grid = if grid.is_empty() {
                crate::baselines::mple_lambda_grid(ds, &penalty_with(st, 0.1)?, &st.fit, AUTO_GRID_LEN)?
            } else {
                grid.clone()
            };
            Ok(fit_mple_bic(ds, &penalty_with(st, 0.1)?, &st.fit, &grid, ds.n() / 2)?.0)
        }
        LambdaPolicy::Exbic { .. } => Err(Error::InvalidParameter("ExBIC applies to PFGMM only".into())),
    }
}

fn run_pfgmm(ds: &GroupedDataset<f64>, problem: &PfgmmProblem<f64>, st: &StudySettings) -> Result<FitResult<f64>> {
    let opts = PfgmmOptions { base: st.fit.clone(), ..PfgmmOptions::default() };
    match &st.pfgmm_lambda {
        LambdaPolicy::Fixed { value } => problem.fit(ds, &penalty_with(st, *value)?, &opts),
        LambdaPolicy::Exbic { grid } => {
            let mut best: Option<(f64, FitResult<f64>)> = None;
            for &l in grid {
                let fit = problem.fit(ds, &penalty_with(st, l)?, &opts)?;
                let crit = exbic(problem.loss(&fit.beta_hat), fit.active_set.len(), ds.n());
                if best.as_ref().is_none_or(|(b, _)| crit < *b) {
                    best = Some((crit, fit));
                }
            }
            best.map(|(_, f)| f).ok_or_else(|| Error::InvalidParameter("empty lambda grid".into()))
        }
        LambdaPolicy::Bic { .. } => Err(Error::InvalidParameter("PFGMM uses a fixed lambda or ExBIC".into())),
    }
}

/// One estimator applied to a dataset, with no reference to a truth.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorFit {
    pub estimator: Estimator,
    pub beta: DVector<f64>,
    pub active_set: ActiveSet,
    pub theta: DVector<f64>,
    pub sigma2: f64,
    pub lambda: f64,
    pub converged: bool,
    /// Selection criterion at the chosen fit: BIC for likelihood-based
    /// estimators, ExBIC for PFGMM, `None` for PLS.
    pub criterion: Option<f64>,
    /// `(index, se)` for the selected coefficients (PFGMM only).
    pub standard_errors: Option<Vec<(usize, f64)>>,
}

/// Runs `estimator` on `ds` with the lambda policy from `st`.
pub fn fit_estimator(ds: &GroupedDataset<f64>, estimator: Estimator, st: &StudySettings) -> Result<EstimatorFit> {
    for pol in [&st.mple_lambda, &st.pls_lambda, &st.pfgmm_lambda] {
        pol.validate()?;
    }
    let cov = st.fit.cov;
    let n = ds.n();
    let loglik_bic = |beta: &DVector<f64>, stage: &StageFit<f64>| -> Result<f64> {
        let params = ModelParams::new(beta.clone(), stage.theta.clone(), stage.sigma2, stage.cov)?;
        let k = ActiveSet::from_beta(beta, 0.0).len();
        Ok(crate::select::bic_from_loglik(crate::lmm::log_likelihood(ds, &params)?, k, n))
    };
    let done = |beta: DVector<f64>, stage: &StageFit<f64>, lambda: f64, converged: bool, criterion: Option<f64>, se| EstimatorFit {
        estimator,
        active_set: ActiveSet::from_beta(&beta, 0.0),
        beta,
        theta: stage.theta.clone(),
        sigma2: stage.sigma2,
        lambda,
        converged,
        criterion,
        standard_errors: se,
    };
    match estimator {
        Estimator::Mple => {
            let fit = run_mple(ds, st)?;
            let eta = fit.eta_hat.clone().expect("mple estimates eta");
            let bic = crate::baselines::bic_value(ds, &fit)?;
            Ok(EstimatorFit {
                estimator,
                beta: fit.beta_hat.clone(),
                active_set: fit.active_set.clone(),
                theta: eta.theta,
                sigma2: eta.sigma2,
                lambda: fit.lambda,
                converged: fit.converged,
                criterion: Some(bic),
                standard_errors: None,
            })
        }
        Estimator::Pls => {
            let lambda = fixed_lambda(&st.pls_lambda).ok_or_else(|| Error::InvalidParameter("PLS uses a fixed lambda".into()))?;
            let fit = fit_pls(ds, &penalty_with(st, lambda)?, &ProxySpec::LogNIdentity, &st.fit)?;
            let stage = fit_pfgmme_eta(ds, &fit.beta_hat, cov)?;
            Ok(done(fit.beta_hat, &stage, lambda, fit.converged, None, None))
        }
        Estimator::Pfgmm | Estimator::Pfgmm2Mle | Estimator::Pfgmm2Reml => {
            let problem = PfgmmProblem::new(ds, &ProxySpec::LogNIdentity, &InstrumentSource::CovariateSieve)?;
            let fit = run_pfgmm(ds, &problem, st)?;
            if estimator == Estimator::Pfgmm {
                let stage = fit_pfgmme_eta(ds, &fit.beta_hat, cov)?;
                let crit = exbic(problem.loss(&fit.beta_hat), fit.active_set.len(), n);
                let se = if st.standard_errors {
                    let params = stage.params()?;
                    let d = asymptotic_diag(ds, &problem, &fit, Some(&params))?;
                    Some(d.support.iter().copied().zip(d.se.iter().copied()).collect())
                } else {
                    None
                };
                return Ok(done(fit.beta_hat, &stage, fit.lambda, fit.converged, Some(crit), se));
            }
            let reduced = ReducedModel::new(ds, &fit.active_set)?;
            let stage = if estimator == Estimator::Pfgmm2Mle { fit_2mle(&reduced, cov)? } else { fit_2reml(&reduced, cov)? };
            let crit = loglik_bic(&stage.beta, &stage)?;
            Ok(done(stage.beta.clone(), &stage, fit.lambda, fit.converged && stage.converged, Some(crit), None))
        }
    }
}

/// Outcomes of every requested estimator on one dataset.
pub fn run_estimators(
    rep: u64,
    ds: &GroupedDataset<f64>,
    cfg: &SimConfig,
    estimators: &[Estimator],
    st: &StudySettings,
) -> Vec<std::result::Result<RepSummary, RepFailure>> {
    let truth = cfg.true_support();
    let s = cfg.beta0.len();
    let cov = st.fit.cov;
    let fail = |e: Estimator, err: Error| RepFailure { rep, estimator: e, message: err.to_string() };
    let needs_pfgmm = estimators.iter().any(|e| matches!(e, Estimator::Pfgmm | Estimator::Pfgmm2Mle | Estimator::Pfgmm2Reml));
    let pfgmm = needs_pfgmm.then(|| {
        let problem = PfgmmProblem::new(ds, &ProxySpec::LogNIdentity, &InstrumentSource::CovariateSieve)?;
        let fit = run_pfgmm(ds, &problem, st)?;
        Ok::<_, Error>((problem, fit))
    });
    let summarize = |e: Estimator, beta: &DVector<f64>, stage: &StageFit<f64>, lambda: f64, conv: bool| {
        metrics(rep, e, ds, beta, (&stage.theta, stage.sigma2), &truth, s, lambda, conv)
    };
    estimators
        .iter()
        .map(|&e| {
            let out: Result<RepSummary> = (|| match e {
                Estimator::Mple => {
                    let fit = run_mple(ds, st)?;
                    let eta = fit.eta_hat.clone().expect("mple estimates eta");
                    metrics(rep, e, ds, &fit.beta_hat, (&eta.theta, eta.sigma2), &truth, s, fit.lambda, fit.converged)
                }
                Estimator::Pls => {
                    let lambda = fixed_lambda(&st.pls_lambda)
                        .ok_or_else(|| Error::InvalidParameter("PLS uses a fixed lambda".into()))?;
                    let fit = fit_pls(ds, &penalty_with(st, lambda)?, &ProxySpec::LogNIdentity, &st.fit)?;
                    let stage = fit_pfgmme_eta(ds, &fit.beta_hat, cov)?;
                    summarize(e, &fit.beta_hat, &stage, lambda, fit.converged)
                }
                Estimator::Pfgmm | Estimator::Pfgmm2Mle | Estimator::Pfgmm2Reml => {
                    let (problem, fit) = match pfgmm.as_ref().expect("pfgmm requested") {
                        Ok(v) => v,
                        Err(err) => return Err(Error::InvalidParameter(err.to_string())),
                    };
                    match e {
                        Estimator::Pfgmm => {
                            let stage = fit_pfgmme_eta(ds, &fit.beta_hat, cov)?;
                            let mut sum = summarize(e, &fit.beta_hat, &stage, fit.lambda, fit.converged)?;
                            if st.standard_errors {
                                sum.se_s = Some(pfgmm_standard_errors(ds, problem, fit, &stage, s));
                            }
                            Ok(sum)
                        }
                        _ => {
                            let reduced = ReducedModel::new(ds, &fit.active_set)?;
                            let stage = if e == Estimator::Pfgmm2Mle { fit_2mle(&reduced, cov)? } else { fit_2reml(&reduced, cov)? };
                            summarize(e, &stage.beta, &stage, fit.lambda, fit.converged && stage.converged)
                        }
                    }
                }
            })();
            out.map_err(|err| fail(e, err))
        })
        .collect()
}

fn pfgmm_standard_errors(
    ds: &GroupedDataset<f64>,
    problem: &PfgmmProblem<f64>,
    fit: &FitResult<f64>,
    stage: &StageFit<f64>,
    s: usize,
) -> Vec<Option<f64>> {
    let Ok(params) = stage.params() else { return vec![None; s] };
    match asymptotic_diag(ds, problem, fit, Some(&params)) {
        Ok(d) => (0..s)
            .map(|j| d.support.iter().position(|&k| k == j).map(|pos| d.se[pos]))
            .collect(),
        Err(_) => vec![None; s],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: f64::NAN, sd: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefSummary {
    pub mean: f64,
    pub sd: f64,
    pub mse: f64,
}

/// Aggregate over the successful replications of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub estimator: Estimator,
    pub reps_ok: usize,
    pub reps_failed: usize,
    pub active_size: MeanSd,
    pub true_positives: MeanSd,
    pub pe: MeanSd,
    pub beta_s: Vec<CoefSummary>,
    pub beta_n: CoefSummary,
    pub sigma2: MeanSd,
    pub theta: Vec<MeanSd>,
}

pub fn aggregate(estimator: Estimator, reps: &[RepSummary], failed: usize, beta0: &[f64]) -> Aggregate {
    let col = |f: &dyn Fn(&RepSummary) -> f64| reps.iter().map(f).collect::<Vec<_>>();
    let coef = |vals: Vec<f64>, truth: f64| {
        let ms = MeanSd::of(&vals);
        let mse = if vals.is_empty() { f64::NAN } else { vals.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / vals.len() as f64 };
        CoefSummary { mean: ms.mean, sd: ms.sd, mse }
    };
    let q = reps.first().map_or(0, |r| r.theta.len());
    Aggregate {
        estimator,
        reps_ok: reps.len(),
        reps_failed: failed,
        active_size: MeanSd::of(&col(&|r| r.active_size as f64)),
        true_positives: MeanSd::of(&col(&|r| r.true_positives as f64)),
        pe: MeanSd::of(&col(&|r| r.pe)),
        beta_s: (0..beta0.len()).map(|j| coef(col(&|r| r.beta_s[j]), beta0[j])).collect(),
        beta_n: coef(col(&|r| r.beta_n), 0.0),
        sigma2: MeanSd::of(&col(&|r| r.sigma2)),
        theta: (0..q).map(|k| MeanSd::of(&col(&|r| r.theta[k]))).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutput {
    pub reps: Vec<RepSummary>,
    pub failures: Vec<RepFailure>,
    pub aggregates: Vec<Aggregate>,
}

/// Runs `cfg.reps` replications in parallel on the current rayon pool; the
/// output order does not depend on scheduling.
pub fn run_study(cfg: &SimConfig, estimators: &[Estimator], st: &StudySettings) -> Result<StudyOutput> {
    cfg.validate()?;
    for pol in [&st.mple_lambda, &st.pls_lambda, &st.pfgmm_lambda] {
        pol.validate()?;
    }
    st.penalty.parse::<PenaltySpec<f64>>()?;
    let per_rep: Vec<Vec<std::result::Result<RepSummary, RepFailure>>> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|rep| match generate(cfg, rep) {
            Ok(sim) => run_estimators(rep, &sim.ds, cfg, estimators, st),
            Err(err) => estimators
                .iter()
                .map(|&e| Err(RepFailure { rep, estimator: e, message: err.to_string() }))
                .collect(),
        })
        .collect();
    let mut reps = Vec::new();
    let mut failures = Vec::new();
    for row in per_rep {
        for r in row {
            match r {
                Ok(s) => reps.push(s),
                Err(f) => failures.push(f),
            }
        }
    }
    let aggregates = estimators
        .iter()
        .map(|&e| {
            let ok: Vec<RepSummary> = reps.iter().filter(|r| r.estimator == e).cloned().collect();
            let failed = failures.iter().filter(|f| f.estimator == e).count();
            aggregate(e, &ok, failed, &cfg.beta0)
        })
        .collect();
    Ok(StudyOutput { reps, failures, aggregates })
}

/// Per-rep CSV with columns
/// `rep, estimator, S_size, TP, PE, beta_1..beta_s, beta_N, sigma2, theta1..thetaq`.
pub fn write_rep_csv<W: std::io::Write>(out: &StudyOutput, s: usize, q: usize, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["rep".to_string(), "estimator".into(), "S_size".into(), "TP".into(), "PE".into()];
    header.extend((1..=s).map(|j| format!("beta_{j}")));
    header.extend(["beta_N".to_string(), "sigma2".into()]);
    header.extend((1..=q).map(|k| format!("theta{k}")));
    wr.write_record(&header)?;
    for r in &out.reps {
        let mut row = vec![r.rep.to_string(), r.estimator.name().into(), r.active_size.to_string(), r.true_positives.to_string(), fmt(r.pe)];
        row.extend(r.beta_s.iter().map(|v| fmt(*v)));
        row.extend([fmt(r.beta_n), fmt(r.sigma2)]);
        row.extend(r.theta.iter().map(|v| fmt(*v)));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Aggregate CSV: one row per estimator with mean/SD (and MSE for the
/// coefficients) of every reported quantity.
pub fn write_aggregate_csv<W: std::io::Write>(out: &StudyOutput, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let Some(first) = out.aggregates.first() else {
        wr.flush()?;
        return Ok(());
    };
    let s = first.beta_s.len();
    let q = out.aggregates.iter().map(|a| a.theta.len()).max().unwrap_or(0);
    let mut header: Vec<String> = ["estimator", "reps_ok", "reps_failed", "S_size_mean", "S_size_sd", "TP_mean", "TP_sd", "PE_mean", "PE_sd"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for j in 1..=s {
        header.extend([format!("beta_{j}_mean"), format!("beta_{j}_sd"), format!("beta_{j}_mse")]);
    }
    header.extend(["beta_N_mean", "beta_N_sd", "beta_N_mse", "sigma2_mean", "sigma2_sd"].map(String::from));
    for k in 1..=q {
        header.extend([format!("theta{k}_mean"), format!("theta{k}_sd")]);
    }
    wr.write_record(&header)?;
    for a in &out.aggregates {
        let mut row = vec![a.estimator.name().to_string(), a.reps_ok.to_string(), a.reps_failed.to_string()];
        for m in [&a.active_size, &a.true_positives, &a.pe] {
            row.extend([fmt(m.mean), fmt(m.sd)]);
        }
        for c in a.beta_s.iter().chain(std::iter::once(&a.beta_n)) {
            row.extend([fmt(c.mean), fmt(c.sd), fmt(c.mse)]);
        }
        row.extend([fmt(a.sigma2.mean), fmt(a.sigma2.sd)]);
        for k in 0..q {
            match a.theta.get(k) {
                Some(t) => row.extend([fmt(t.mean), fmt(t.sd)]),
                None => row.extend([String::new(), String::new()]),
            }
        }
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}
