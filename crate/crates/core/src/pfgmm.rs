//! Penalized focused GMM selection under error–covariate endogeneity.
//!
//! Observations are first transformed by a proxy covariance
//! `Ṽ_z,i = I + Z_i ℳ Z_iᵀ`. Two sieve instruments per covariate (`f_j = w`,
//! `h_j = w²`) give moments `v_j = n⁻¹ instrumentᵀ (y* − X*β)`; only the
//! moments of coordinates in the current support enter the loss, which makes
//! the objective discontinuous at `β_j = 0`. The coordinate-descent solver
//! compares the zero and nonzero branches exactly.

use crate::baselines::{fit_pls_transformed, FitOptions, FitResult};
use crate::error::{Error, Result};
use crate::linalg::{eig_extrema, inv_sqrtm_spd, BlockDiag, SpdBlock};
use crate::lmm::{group_covariance, ActiveSet, GroupedDataset, ModelParams};
use crate::penalty::PenaltySpec;
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Instrument columns with sample variance below this are rejected.
pub const VAR_FLOOR: f64 = 1e-10;
/// Zero branch wins unless the nonzero branch is lower by more than this.
pub const TIE_TOL: f64 = 1e-12;

/// Choice of `ℳ` in the proxy covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum ProxySpec<T: Scalar> {
    /// `ℳ = log(n) I_q`.
    LogNIdentity,
    /// User `q×q` symmetric positive semidefinite matrix.
    Custom(DMatrix<T>),
}

impl<T: Scalar> ProxySpec<T> {
    pub fn matrix(&self, n: usize, q: usize) -> Result<DMatrix<T>> {
        match self {
            ProxySpec::LogNIdentity => Ok(DMatrix::identity(q, q) * T::from_count(n).ln()),
            ProxySpec::Custom(m) => {
                if m.nrows() != q || m.ncols() != q {
                    return Err(Error::Dimension(format!("proxy matrix must be {q}x{q}")));
                }
                let (lo, _) = eig_extrema(m)?;
                if lo < -T::lit(1e-12) {
                    return Err(Error::Conditioning { context: "proxy matrix".into(), min_eigenvalue: lo.to_f64_lossy() });
                }
                Ok(m.clone())
            }
        }
    }
}

/// Proxy covariance blocks and their inverse square roots.
#[derive(Debug, Clone)]
pub struct ProxyTransform<T: Scalar> {
    pub m: DMatrix<T>,
    pub vz: BlockDiag<T>,
    pub inv_sqrt: BlockDiag<T>,
}

pub fn build_proxy_vz<T: Scalar>(ds: &GroupedDataset<T>, proxy: &ProxySpec<T>) -> Result<ProxyTransform<T>> {
    let m = proxy.matrix(ds.n(), ds.q())?;
    let mut blocks = Vec::with_capacity(ds.num_groups());
    let mut roots = Vec::with_capacity(ds.num_groups());
    for g in ds.groups() {
        let mut v = &g.z * &m * g.z.transpose();
        for i in 0..g.len() {
            v[(i, i)] += T::one();
        }
        let v = (&v + v.transpose()) * T::lit(0.5);
        let spd = SpdBlock::new(v)?;
        roots.push(inv_sqrtm_spd(&spd)?.into_matrix());
        blocks.push(spd.into_matrix());
    }
    Ok(ProxyTransform { m, vz: BlockDiag::new(blocks)?, inv_sqrt: BlockDiag::new(roots)? })
}

#[derive(Debug, Clone, PartialEq)]
pub enum InstrumentSource<T: Scalar> {
    /// `W = X`.
    CovariateSieve,
    /// User `n×p` matrix, one column per fixed effect.
    ExternalW(DMatrix<T>),
}

/// Transformed sieve instruments. `h_active[j]` is false for the intercept
/// column, whose square carries no extra information.
#[derive(Debug, Clone)]
pub struct InstrumentSet<T: Scalar> {
    pub f_star: DMatrix<T>,
    pub h_star: DMatrix<T>,
    pub h_active: Vec<bool>,
    /// Column treated as the intercept (constant before the transform).
    pub intercept: Option<usize>,
}

fn col_mean_var<T: Scalar>(c: nalgebra::DVectorView<'_, T>) -> (T, T) {
    let n = T::from_count(c.len());
    let mean = c.sum() / n;
    let var = c.iter().fold(T::zero(), |a, &v| a + (v - mean).square()) / n;
    (mean, var)
}

/// Builds `F* = W*` and `H* = (W*)²` (column-wise) with `W* = Ṽ_z^{-1/2} W`,
/// centering each column. The first column of `W` that is constant is the
/// intercept: its `f` column is kept uncentered and its `h` column dropped.
pub fn make_instruments<T: Scalar>(
    ds: &GroupedDataset<T>,
    inv_sqrt: &BlockDiag<T>,
    source: &InstrumentSource<T>,
) -> Result<InstrumentSet<T>> {
    let w = match source {
        InstrumentSource::CovariateSieve => ds.stacked_x(),
        InstrumentSource::ExternalW(w) => {
            if w.nrows() != ds.n() || w.ncols() != ds.p() {
                return Err(Error::Dimension(format!(
                    "external instruments must be {}x{}, got {}x{}",
                    ds.n(),
                    ds.p(),
                    w.nrows(),
                    w.ncols()
                )));
            }
            w.clone()
        }
    };
    if let Some(pos) = w.iter().position(|v| !v.is_finite_value()) {
        return Err(Error::DegenerateInstrument { column: pos / w.nrows().max(1), variance: f64::NAN });
    }
    let intercept = (0..w.ncols()).find(|&j| {
        let c = w.column(j);
        c.len() > 0 && c.iter().all(|&v| v == c[0]) && c[0] != T::zero()
    });
    let ws = inv_sqrt.mul_mat(&w)?;
    let floor = T::lit(VAR_FLOOR);
    let mut f = ws.clone();
    let mut h = ws.map(|v| v * v);
    let mut h_active = vec![true; w.ncols()];
    for j in 0..w.ncols() {
        if Some(j) == intercept {
            h_active[j] = false;
            h.column_mut(j).fill(T::zero());
            continue;
        }
        for m in [&mut f, &mut h] {
            let (mean, var) = col_mean_var(m.column(j));
            if !(var > floor) {
                return Err(Error::DegenerateInstrument { column: j, variance: var.to_f64_lossy() });
            }
            m.column_mut(j).add_scalar_mut(-mean);
        }
    }
    Ok(InstrumentSet { f_star: f, h_star: h, h_active, intercept })
}

/// Diagonal GMM weights. The intercept's `f` weight is its inverse mean
/// square (the column is uncentered) and its `h` weight is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmWeights<T: Scalar> {
    pub w_f: DVector<T>,
    pub w_h: DVector<T>,
}

impl<T: Scalar> GmmWeights<T> {
    pub fn from_instruments(inst: &InstrumentSet<T>) -> Result<Self> {
        let p = inst.f_star.ncols();
        let mut w_f = DVector::zeros(p);
        let mut w_h = DVector::zeros(p);
        let n = T::from_count(inst.f_star.nrows());
        for j in 0..p {
            let var_f = if Some(j) == inst.intercept {
                inst.f_star.column(j).norm_squared() / n
            } else {
                col_mean_var(inst.f_star.column(j)).1
            };
            if !(var_f > T::lit(VAR_FLOOR)) {
                return Err(Error::DegenerateInstrument { column: j, variance: var_f.to_f64_lossy() });
            }
            w_f[j] = T::one() / var_f;
            if inst.h_active[j] {
                let var_h = col_mean_var(inst.h_star.column(j)).1;
                if !(var_h > T::lit(VAR_FLOOR)) {
                    return Err(Error::DegenerateInstrument { column: j, variance: var_h.to_f64_lossy() });
                }
                w_h[j] = T::one() / var_h;
            }
        }
        Ok(Self { w_f, w_h })
    }
}

/// Everything the PFGMM objective needs, built once per dataset.
#[derive(Debug, Clone)]
pub struct PfgmmProblem<T: Scalar> {
    pub proxy: ProxyTransform<T>,
    pub instruments: InstrumentSet<T>,
    pub weights: GmmWeights<T>,
    /// `X* = Ṽ_z^{-1/2}X`, `y* = Ṽ_z^{-1/2}y`.
    pub x_star: DMatrix<T>,
    pub y_star: DVector<T>,
    /// `n⁻¹F*ᵀX*`, `n⁻¹H*ᵀX*`, `n⁻¹F*ᵀy*`, `n⁻¹H*ᵀy*`.
    gf: DMatrix<T>,
    gh: DMatrix<T>,
    mf: DVector<T>,
    mh: DVector<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PfgmmInit<T: Scalar> {
    /// PLS estimate with the same penalty and proxy.
    Pls,
    /// Unpenalized least squares on the forced coordinates, zero elsewhere.
    Zero,
    Given(DVector<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfgmmOptions<T: Scalar> {
    pub base: FitOptions,
    pub init: PfgmmInit<T>,
    /// Convergence threshold on `max |Δβ|` once the support is stable.
    pub step_tol: f64,
    /// Smoothing scale `δ` for the support indicator: before the exact
    /// descent, coordinate descent runs on the objective with `I(β_j ≠ 0)`
    /// replaced by `β_j²/(β_j² + δ)`. Small coefficients then carry little
    /// weight on their own moments, so clusters of correlated spurious
    /// coordinates cannot hold each other in the support. `None` skips it.
    pub smoothing: Option<f64>,
}

impl<T: Scalar> Default for PfgmmOptions<T> {
    fn default() -> Self {
        Self { base: FitOptions::default(), init: PfgmmInit::Pls, step_tol: 1e-8, smoothing: Some(SMOOTHING_DELTA) }
    }
}

impl<T: Scalar> PfgmmProblem<T> {
    pub fn new(ds: &GroupedDataset<T>, proxy: &ProxySpec<T>, source: &InstrumentSource<T>) -> Result<Self> {
        let proxy = build_proxy_vz(ds, proxy)?;
        let instruments = make_instruments(ds, &proxy.inv_sqrt, source)?;
        let weights = GmmWeights::from_instruments(&instruments)?;
        let x_star = proxy.inv_sqrt.mul_mat(&ds.stacked_x())?;
        let y_star = proxy.inv_sqrt.mul_vec(&ds.stacked_y())?;
        let inv_n = T::one() / T::from_count(ds.n());
        let gf = instruments.f_star.transpose() * &x_star * inv_n;
        let gh = instruments.h_star.transpose() * &x_star * inv_n;
        let mf = instruments.f_star.transpose() * &y_star * inv_n;
        let mh = instruments.h_star.transpose() * &y_star * inv_n;
        Ok(Self { proxy, instruments, weights, x_star, y_star, gf, gh, mf, mh })
    }

    pub fn n(&self) -> usize {
        self.x_star.nrows()
    }

    pub fn p(&self) -> usize {
        self.x_star.ncols()
    }

    /// Moment vectors `(v_F, v_H)` at `β`, for every coordinate.
    pub fn moments(&self, beta: &DVector<T>) -> (DVector<T>, DVector<T>) {
        (&self.mf - &self.gf * beta, &self.mh - &self.gh * beta)
    }

    fn masked_loss(&self, vf: &DVector<T>, vh: &DVector<T>, in_support: impl Fn(usize) -> bool) -> T {
        (0..self.p()).filter(|&j| in_support(j)).fold(T::zero(), |a, j| {
            a + self.weights.w_f[j] * vf[j].square() + self.weights.w_h[j] * vh[j].square()
        })
    }

    /// `L(β) = Σ_{j: β_j ≠ 0} w_F,j v_F,j² + w_H,j v_H,j²`.
    pub fn loss(&self, beta: &DVector<T>) -> T {
        let (vf, vh) = self.moments(beta);
        self.masked_loss(&vf, &vh, |j| beta[j] != T::zero())
    }

    /// Loss with the moments of `forced` always included.
    pub fn loss_forced(&self, beta: &DVector<T>, forced: &[usize]) -> T {
        let (vf, vh) = self.moments(beta);
        self.masked_loss(&vf, &vh, |j| beta[j] != T::zero() || forced.contains(&j))
    }

    /// Gradient of the loss with the support held fixed at `support`.
    pub fn restricted_gradient(&self, beta: &DVector<T>, support: &[usize]) -> DVector<T> {
        let (vf, vh) = self.moments(beta);
        let mut g = DVector::zeros(self.p());
        let two = T::lit(2.0);
        for &j in support {
            let af = self.weights.w_f[j] * vf[j] * two;
            let ah = self.weights.w_h[j] * vh[j] * two;
            for k in 0..self.p() {
                g[k] -= af * self.gf[(j, k)] + ah * self.gh[(j, k)];
            }
        }
        g
    }

    /// `Q(β) = L(β) + Σ P(|β_j|)` with the unpenalized moments always in.
    pub fn objective(&self, beta: &DVector<T>, pen: &PenaltySpec<T>, unpen: &[usize]) -> T {
        self.loss_forced(beta, unpen) + pen.total(beta.as_slice(), unpen)
    }

    /// Coordinate descent on `Q` from `init`.
    pub fn solve(&self, pen: &PenaltySpec<T>, opts: &PfgmmOptions<T>, init: DVector<T>) -> Result<FitResult<T>> {
        opts.base.check(self.p())?;
        if init.len() != self.p() {
            return Err(Error::Dimension("initial value has the wrong length".into()));
        }
        let init = match opts.smoothing {
            Some(delta) => self.descend_smoothed(pen, opts, init, T::lit(delta)),
            None => init,
        };
        Ok(self.descend(pen, opts, init))
    }

    /// `Q_n` with the support indicator replaced by `ω(t) = t²/(t² + δ)`.
    pub fn smoothed_objective(&self, beta: &DVector<T>, pen: &PenaltySpec<T>, unpen: &[usize], delta: T) -> T {
        let (vf, vh) = self.moments(beta);
        let wf = &self.weights.w_f;
        let wh = &self.weights.w_h;
        let mut q = pen.total(beta.as_slice(), unpen);
        for j in 0..self.p() {
            let om = if unpen.contains(&j) { T::one() } else { smooth_indicator(beta[j], delta) };
            q += om * (wf[j] * vf[j].square() + wh[j] * vh[j].square());
        }
        q
    }

    /// Coordinate descent on [`Self::smoothed_objective`]. Each coordinate
    /// minimizes a one-dimensional nonconvex function by a grid scan refined
    /// with golden-section search; the move is kept only when it lowers the
    /// objective.
    fn descend_smoothed(&self, pen: &PenaltySpec<T>, opts: &PfgmmOptions<T>, init: DVector<T>, delta: T) -> DVector<T> {
        let base = &opts.base;
        let p = self.p();
        let unpen = &base.unpenalized;
        let forced: Vec<bool> = (0..p).map(|j| unpen.contains(&j)).collect();
        let zero_tol = T::lit(base.zero_tol);
        let wf = &self.weights.w_f;
        let wh = &self.weights.w_h;
        let mut beta = init;
        let (mut vf, mut vh) = self.moments(&beta);
        let omega = |j: usize, b: T| if forced[j] { T::one() } else { smooth_indicator(b, delta) };
        for _ in 0..base.max_iter {
            let mut max_step = T::zero();
            let mut support_changed = false;
            for k in 0..p {
                let old = beta[k];
                let gfk = self.gf.column(k);
                let ghk = self.gh.column(k);
                let (mut a, mut b) = (T::zero(), T::zero());
                for j in 0..p {
                    if j == k || (beta[j] == T::zero() && !forced[j]) {
                        continue;
                    }
                    let om = omega(j, beta[j]);
                    let uf = vf[j] + gfk[j] * old;
                    let uh = vh[j] + ghk[j] * old;
                    a += om * (wf[j] * gfk[j].square() + wh[j] * ghk[j].square());
                    b += om * (wf[j] * gfk[j] * uf + wh[j] * ghk[j] * uh);
                }
                let ufk = vf[k] + gfk[k] * old;
                let uhk = vh[k] + ghk[k] * old;
                let f = |t: T| {
                    let own = wf[k] * (ufk - gfk[k] * t).square() + wh[k] * (uhk - ghk[k] * t).square();
                    let pen_t = if forced[k] { T::zero() } else { pen.value_unchecked(t.abs()) };
                    a * t * t - T::lit(2.0) * b * t + omega(k, t) * own + pen_t
                };
                let new = if forced[k] {
                    let aa = a + wf[k] * gfk[k].square() + wh[k] * ghk[k].square();
                    let bb = b + wf[k] * gfk[k] * ufk + wh[k] * ghk[k] * uhk;
                    if aa > T::zero() { bb / aa } else { old }
                } else {
                    let best = minimize_1d(&f, old, a, b, delta);
                    let best = if best.abs() <= zero_tol { T::zero() } else { best };
                    if f(best) < f(old) { best } else { old }
                };
                if new != old {
                    let d = new - old;
                    vf.axpy(-d, &gfk, T::one());
                    vh.axpy(-d, &ghk, T::one());
                    beta[k] = new;
                    max_step = max_step.max(d.abs());
                    support_changed |= (old == T::zero()) != (new == T::zero());
                }
            }
            (vf, vh) = self.moments(&beta);
            if !support_changed && max_step < T::lit(opts.step_tol) {
                break;
            }
        }
        beta
    }

    /// Exact coordinate descent on `Q_n`.
    fn descend(&self, pen: &PenaltySpec<T>, opts: &PfgmmOptions<T>, init: DVector<T>) -> FitResult<T> {
        let base = &opts.base;
        let p = self.p();
        let unpen = &base.unpenalized;
        let forced: Vec<bool> = (0..p).map(|j| unpen.contains(&j)).collect();
        let zero_tol = T::lit(base.zero_tol);
        let tie = T::lit(TIE_TOL);
        let wf = &self.weights.w_f;
        let wh = &self.weights.w_h;
        let mut beta = init.map(|b| if b.abs() <= zero_tol { T::zero() } else { b });
        let (mut vf, mut vh) = self.moments(&beta);
        let mut in_s: Vec<bool> = (0..p).map(|j| forced[j] || beta[j] != T::zero()).collect();
        let mut obj = self.objective(&beta, pen, unpen);
        let mut trace = vec![obj];
        let mut converged = false;
        let mut sweeps = 0;
        while sweeps < base.max_iter {
            sweeps += 1;
            let mut max_step = T::zero();
            let mut support_changed = false;
            for k in 0..p {
                let old = beta[k];
                // moments with β_k removed
                let gfk = self.gf.column(k);
                let ghk = self.gh.column(k);
                let (mut a, mut b, mut q0) = (T::zero(), T::zero(), T::zero());
                for j in 0..p {
                    if !(in_s[j] || j == k) {
                        continue;
                    }
                    let uf = vf[j] + gfk[j] * old;
                    let uh = vh[j] + ghk[j] * old;
                    a += wf[j] * gfk[j].square() + wh[j] * ghk[j].square();
                    b += wf[j] * gfk[j] * uf + wh[j] * ghk[j] * uh;
                    if j != k {
                        q0 += wf[j] * uf.square() + wh[j] * uh.square();
                    }
                }
                let c = {
                    let uf = vf[k] + gfk[k] * old;
                    let uh = vh[k] + ghk[k] * old;
                    q0 + wf[k] * uf.square() + wh[k] * uh.square()
                };
                let new = if forced[k] {
                    if a > T::zero() { b / a } else { old }
                } else if a > T::zero() {
                    let cand = pen.threshold(T::lit(2.0) * a, b / a);
                    if cand == T::zero() {
                        T::zero()
                    } else {
                        let qn = a * cand.square() - T::lit(2.0) * b * cand + c + pen.value_unchecked(cand.abs());
                        if qn < q0 - tie { cand } else { T::zero() }
                    }
                } else {
                    T::zero()
                };
                let new = if !forced[k] && new.abs() <= zero_tol { T::zero() } else { new };
                if new != old {
                    let delta = new - old;
                    vf.axpy(-delta, &gfk, T::one());
                    vh.axpy(-delta, &ghk, T::one());
                    beta[k] = new;
                    max_step = max_step.max(delta.abs());
                }
                let now_in = forced[k] || new != T::zero();
                if now_in != in_s[k] {
                    support_changed = true;
                    in_s[k] = now_in;
                }
            }
            // refresh moments to avoid drift from the rank-one updates
            (vf, vh) = self.moments(&beta);
            obj = self.objective(&beta, pen, unpen);
            trace.push(obj);
            if !support_changed && max_step < T::lit(opts.step_tol) {
                converged = true;
                break;
            }
        }
        let support: Vec<usize> = (0..p).filter(|&j| in_s[j]).collect();
        let g = self.restricted_gradient(&beta, &support);
        let kkt = (0..p)
            .filter(|&j| beta[j] != T::zero())
            .map(|j| {
                let pd = if forced[j] { T::zero() } else { beta[j].signum() * pen.deriv_unchecked(beta[j].abs()) };
                (g[j] + pd).abs()
            })
            .fold(T::zero(), |m, v| m.max(v));
        FitResult {
            active_set: ActiveSet::from_beta(&beta, zero_tol),
            beta_hat: beta,
            eta_hat: None,
            objective: obj,
            iterations: sweeps,
            converged,
            trace,
            lambda: pen.lambda(),
            kkt_residual: kkt,
        }
    }

    /// Starting value according to `init`.
    pub fn initial_value(
        &self,
        ds: &GroupedDataset<T>,
        pen: &PenaltySpec<T>,
        opts: &PfgmmOptions<T>,
    ) -> Result<DVector<T>> {
        match &opts.init {
            PfgmmInit::Pls => Ok(fit_pls_transformed(&self.proxy.inv_sqrt, ds, pen, &opts.base)?.beta_hat),
            PfgmmInit::Zero => {
                let mut beta = DVector::zeros(self.p());
                let u = &opts.base.unpenalized;
                if !u.is_empty() {
                    let xu = self.x_star.select_columns(u);
                    if let Some(ch) = (xu.transpose() * &xu).cholesky() {
                        let b = ch.solve(&(xu.transpose() * &self.y_star));
                        for (i, &j) in u.iter().enumerate() {
                            beta[j] = b[i];
                        }
                    }
                }
                Ok(beta)
            }
            PfgmmInit::Given(b) => Ok(b.clone()),
        }
    }

    pub fn fit(&self, ds: &GroupedDataset<T>, pen: &PenaltySpec<T>, opts: &PfgmmOptions<T>) -> Result<FitResult<T>> {
        let init = self.initial_value(ds, pen, opts)?;
        self.solve(pen, opts, init)
    }
}

/// Default smoothing scale for [`PfgmmOptions::smoothing`].
pub const SMOOTHING_DELTA: f64 = 1e-2;

/// `t²/(t² + δ)`: a smooth stand-in for `I(t ≠ 0)`.
pub fn smooth_indicator<T: Scalar>(t: T, delta: T) -> T {
    let t2 = t * t;
    t2 / (t2 + delta)
}

/// Global-ish minimizer of a scalar function: candidates `0`, the current
/// value and a 41-point grid spanning the scale of the quadratic part, then
/// golden-section refinement around the best grid point.
fn minimize_1d<T: Scalar>(f: &dyn Fn(T) -> T, old: T, a: T, b: T, delta: T) -> T {
    let quad = if a > T::zero() { (b / a).abs() } else { T::zero() };
    let r = (T::lit(2.0) * quad).max(T::lit(2.0) * old.abs()).max(T::lit(4.0) * delta.sqrt());
    let m = 20;
    let h = r / T::from_count(m);
    let mut best = (T::zero(), f(T::zero()));
    let consider = |t: T, best: &mut (T, T)| {
        let v = f(t);
        if v < best.1 {
            *best = (t, v);
        }
    };
    consider(old, &mut best);
    for i in 1..=m {
        let t = h * T::from_count(i);
        consider(t, &mut best);
        consider(-t, &mut best);
    }
    if best.0 == T::zero() {
        return T::zero();
    }
    // golden section on [best - h, best + h], not crossing zero
    let (mut lo, mut hi) = (best.0 - h, best.0 + h);
    if best.0 > T::zero() {
        lo = lo.max(T::zero());
    } else {
        hi = hi.min(T::zero());
    }
    let g = T::lit(0.618_033_988_749_895);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..60 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    let t = if f1 < f2 { x1 } else { x2 };
    if f(t) < best.1 { t } else { best.0 }
}

/// `L(β)` for a standalone call; see [`PfgmmProblem::loss`].
pub fn pfgmm_loss<T: Scalar>(problem: &PfgmmProblem<T>, beta: &DVector<T>) -> Result<T> {
    if beta.len() != problem.p() {
        return Err(Error::Dimension("beta has the wrong length".into()));
    }
    Ok(problem.loss(beta))
}

pub fn fit_pfgmm<T: Scalar>(
    ds: &GroupedDataset<T>,
    pen: &PenaltySpec<T>,
    proxy: &ProxySpec<T>,
    source: &InstrumentSource<T>,
    opts: &PfgmmOptions<T>,
) -> Result<FitResult<T>> {
    PfgmmProblem::new(ds, proxy, source)?.fit(ds, pen, opts)
}

/// Uniform random start in `[-scale, scale]^p` with roughly half the
/// penalized coordinates zeroed.
pub fn random_start<T: Scalar, R: Rng>(rng: &mut R, p: usize, scale: f64) -> DVector<T> {
    DVector::from_fn(p, |_, _| {
        if rng.random_bool(0.5) {
            T::zero()
        } else {
            T::lit(rng.random_range(-scale..scale))
        }
    })
}

/// Sandwich quantities for the selected coefficients.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AsymptoticDiag<T: Scalar> {
    pub support: Vec<usize>,
    pub a_hat: DMatrix<T>,
    pub upsilon_hat: DMatrix<T>,
    pub gamma_hat: DMatrix<T>,
    pub sigma_hat: DMatrix<T>,
    pub se: DVector<T>,
}

/// Columns of `Π* = [F*_S, H*_S]` that carry positive weight, with weights.
fn support_instruments<T: Scalar>(problem: &PfgmmProblem<T>, support: &[usize]) -> (DMatrix<T>, DVector<T>) {
    let n = problem.n();
    let mut cols = Vec::new();
    let mut w = Vec::new();
    for &j in support {
        cols.push(problem.instruments.f_star.column(j).into_owned());
        w.push(problem.weights.w_f[j]);
    }
    for &j in support {
        if problem.weights.w_h[j] > T::zero() {
            cols.push(problem.instruments.h_star.column(j).into_owned());
            w.push(problem.weights.w_h[j]);
        }
    }
    let pi = if cols.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&cols) };
    (pi, DVector::from_vec(w))
}

/// `Â = n⁻¹X*_Sᵀ Π*`, `Υ̂ = n⁻¹Π*ᵀ Ṽ_z^{-1/2}(σ²V)Ṽ_z^{-1/2} Π*`,
/// `Σ̂ = 2ÂJÂᵀ`, `Γ̂ = 4ÂJΥ̂JÂᵀ`, `se = √diag(Σ̂⁻¹Γ̂Σ̂⁻¹/n)`.
/// The covariance uses `params_for_v` when given, else the fit's `η̂`.
pub fn asymptotic_diag<T: Scalar>(
    ds: &GroupedDataset<T>,
    problem: &PfgmmProblem<T>,
    fit: &FitResult<T>,
    params_for_v: Option<&ModelParams<T>>,
) -> Result<AsymptoticDiag<T>> {
    let support = fit.active_set.indices().to_vec();
    if support.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    let (theta, sigma2, cov) = match (params_for_v, &fit.eta_hat) {
        (Some(pv), _) => (pv.theta.clone(), pv.sigma2, pv.cov),
        (None, Some(e)) => (e.theta.clone(), e.sigma2, e.cov),
        (None, None) => return Err(Error::InvalidParameter("variance parameters needed for the sandwich".into())),
    };
    let psi = cov.psi_diag(&theta, ds.q())?;
    let n = problem.n();
    let inv_n = T::one() / T::from_count(n);
    let (pi, w) = support_instruments(problem, &support);
    let xs = problem.x_star.select_columns(&support);
    let a_hat = xs.transpose() * &pi * inv_n;
    let mut upsilon = DMatrix::<T>::zeros(pi.ncols(), pi.ncols());
    for (gi, g) in ds.groups().iter().enumerate() {
        let r = problem.proxy.inv_sqrt.range(gi);
        let s = problem.proxy.inv_sqrt.block(gi);
        let cov_i = s * group_covariance(&g.z, &psi, sigma2) * s;
        let pi_i = pi.rows(r.start, r.len());
        upsilon += pi_i.transpose() * cov_i * pi_i;
    }
    upsilon *= inv_n;
    upsilon = (&upsilon + upsilon.transpose()) * T::lit(0.5);
    let j = DMatrix::from_diagonal(&w);
    let aj = &a_hat * &j;
    let sigma_hat = (&aj * a_hat.transpose()) * T::lit(2.0);
    let gamma_hat = (&aj * &upsilon * aj.transpose()) * T::lit(4.0);
    let gamma_hat = (&gamma_hat + gamma_hat.transpose()) * T::lit(0.5);
    let sinv = sigma_hat
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("Σ̂ is singular".into()))?
        .inverse();
    let cov_beta = &sinv * &gamma_hat * &sinv * inv_n;
    let se = cov_beta.diagonal().map(|v| v.max(T::zero()).sqrt());
    Ok(AsymptoticDiag { support, a_hat, upsilon_hat: upsilon, gamma_hat, sigma_hat, se })
}

/// Eigenvalue margins for the proxy conditions at one constant `C₁`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ProxyMargin {
    pub c1: f64,
    /// `λ_min[C₁ℳ − σ⁻²Ψ]`.
    pub m1_first: f64,
    /// `λ_min[C₁ log(n) σ⁻²Ψ − ℳ]`.
    pub m1_second: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct InstrumentReport {
    pub f_variance_range: (f64, f64),
    pub h_variance_range: (f64, f64),
    /// `min_{j∈Ŝ}` sample variance of `r*·F*_j`.
    pub min_moment_variance: Option<f64>,
    /// Eigenvalue range of `ÂÂᵀ`.
    pub aat_eigen_range: Option<(f64, f64)>,
    /// Eigenvalue range of `Υ̂`.
    pub upsilon_eigen_range: Option<(f64, f64)>,
    pub proxy_margins: Vec<ProxyMargin>,
    /// `P(0⁺)` and `P'(0⁺)`, both reported for the proxy-rate condition.
    pub penalty_at_zero_plus: Option<(f64, f64)>,
}

/// Finite-sample diagnostics for the instrument and proxy conditions.
pub fn check_assumptions_im<T: Scalar>(
    ds: &GroupedDataset<T>,
    problem: &PfgmmProblem<T>,
    fit: Option<&FitResult<T>>,
    true_params: Option<&ModelParams<T>>,
    pen: Option<&PenaltySpec<T>>,
) -> Result<InstrumentReport> {
    let inst = &problem.instruments;
    let range = |m: &DMatrix<T>, skip: &dyn Fn(usize) -> bool| {
        (0..m.ncols()).filter(|&j| !skip(j)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), j| {
            let v = col_mean_var(m.column(j)).1.to_f64_lossy();
            (lo.min(v), hi.max(v))
        })
    };
    let f_variance_range = range(&inst.f_star, &|j| Some(j) == inst.intercept);
    let h_variance_range = range(&inst.h_star, &|j| !inst.h_active[j]);
    let mut min_moment_variance = None;
    let mut aat_eigen_range = None;
    let mut upsilon_eigen_range = None;
    if let Some(fit) = fit.filter(|f| !f.active_set.is_empty()) {
        let r = &problem.y_star - &problem.x_star * &fit.beta_hat;
        min_moment_variance = fit
            .active_set
            .indices()
            .iter()
            .map(|&j| {
                let prod = r.component_mul(&inst.f_star.column(j));
                col_mean_var(prod.column(0)).1.to_f64_lossy()
            })
            .reduce(f64::min);
        let params = true_params.cloned();
        if params.is_some() || fit.eta_hat.is_some() {
            let d = asymptotic_diag(ds, problem, fit, params.as_ref())?;
            let aat = &d.a_hat * d.a_hat.transpose();
            let (lo, hi) = eig_extrema(&aat)?;
            aat_eigen_range = Some((lo.to_f64_lossy(), hi.to_f64_lossy()));
            let (lo, hi) = eig_extrema(&d.upsilon_hat)?;
            upsilon_eigen_range = Some((lo.to_f64_lossy(), hi.to_f64_lossy()));
        }
    }
    let mut proxy_margins = Vec::new();
    if let Some(tp) = true_params {
        let ratio = tp.cov.psi(&tp.theta, ds.q())? / tp.sigma2;
        let logn = T::from_count(ds.n()).ln();
        for c1 in [1.5, 2.0, 5.0] {
            let c = T::lit(c1);
            let first = &problem.proxy.m * c - &ratio;
            let second = &ratio * (c * logn) - &problem.proxy.m;
            proxy_margins.push(ProxyMargin {
                c1,
                m1_first: eig_extrema(&first)?.0.to_f64_lossy(),
                m1_second: eig_extrema(&second)?.0.to_f64_lossy(),
            });
        }
    }
    Ok(InstrumentReport {
        f_variance_range,
        h_variance_range,
        min_moment_variance,
        aat_eigen_range,
        upsilon_eigen_range,
        proxy_margins,
        penalty_at_zero_plus: pen.map(|p| (0.0, p.deriv_at_zero_plus().to_f64_lossy())),
    })
}
