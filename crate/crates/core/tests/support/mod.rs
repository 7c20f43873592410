//! Property checks shared by the core integration tests and the acceptance
//! suite. Each check returns the measured quantity; callers assert.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pfgmm_core::baselines::FitOptions;
use pfgmm_core::lmm::{Group, GroupedDataset};
use pfgmm_core::linalg::{sqrtm_spd, SpdBlock};
use pfgmm_core::optim::{minimize, BfgsOptions};
use pfgmm_core::penalty::PenaltySpec;
use pfgmm_core::pfgmm::{random_start, InstrumentSource, PfgmmInit, PfgmmOptions, PfgmmProblem, ProxySpec};
use pfgmm_core::sim::{generate, injected_correlation, EndoSet, Endogeneity, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Grouped data with an intercept column, random-intercept (and slope on
/// column 1 when `q = 2`) effects, and response `Xβ + Zb + ε`.
pub fn random_dataset(rng: &mut ChaCha8Rng, sizes: &[usize], beta: &DVector<f64>, q: usize, noise: f64) -> GroupedDataset<f64> {
    let p = beta.len();
    let groups = sizes
        .iter()
        .map(|&m| {
            let x = DMatrix::from_fn(m, p, |_, j| if j == 0 { 1.0 } else { normal(rng) });
            let z = x.columns(0, q).into_owned();
            let b = DVector::from_fn(q, |_, _| 0.5 * normal(rng));
            let e = DVector::from_fn(m, |_, _| noise * normal(rng));
            Group { y: &x * beta + &z * b + e, x, z }
        })
        .collect();
    GroupedDataset::new(groups).unwrap()
}

/// `‖S·S − A‖_F / ‖A‖_F` for a random 8×8 SPD matrix.
pub fn spd_sqrt_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = DMatrix::from_fn(8, 8, |_, _| normal(&mut rng));
    let a = &b * b.transpose() + DMatrix::identity(8, 8) * 0.1;
    let s = sqrtm_spd(&SpdBlock::new(a.clone()).unwrap()).unwrap();
    let s = s.matrix();
    (s * s - &a).norm() / a.norm()
}

/// Largest relative error of the restricted gradient against central
/// differences (step 1e-6) of the support-masked loss.
pub fn restricted_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = 6;
    let beta0 = DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0));
    let ds = random_dataset(&mut rng, &[5; 10], &beta0, 2, 0.5);
    let pr = PfgmmProblem::new(&ds, &ProxySpec::LogNIdentity, &InstrumentSource::CovariateSieve).unwrap();
    let beta = DVector::from_fn(p, |_, _| rng.random_range(-1.5..1.5));
    let support: Vec<usize> = (0..p).filter(|_| rng.random_bool(0.7)).collect();
    let masked = |b: &DVector<f64>| {
        let (vf, vh) = pr.moments(b);
        support.iter().map(|&j| pr.weights.w_f[j] * vf[j].powi(2) + pr.weights.w_h[j] * vh[j].powi(2)).sum::<f64>()
    };
    let g = pr.restricted_gradient(&beta, &support);
    let h = 1e-6;
    (0..p)
        .map(|k| {
            let mut up = beta.clone();
            up[k] += h;
            let mut dn = beta.clone();
            dn[k] -= h;
            let fd = (masked(&up) - masked(&dn)) / (2.0 * h);
            (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-3)
        })
        .fold(0.0, f64::max)
}

pub struct OracleOutcome {
    pub p: usize,
    pub fit_support: usize,
    pub fit_q: f64,
    /// Minimum of `Q` over every support.
    pub oracle_q: f64,
    /// Minimum of `Q` over coefficient vectors with exactly the fitted support.
    pub own_support_q: f64,
}

impl OracleOutcome {
    pub fn agrees(&self, tol: f64) -> bool {
        (self.fit_q - self.oracle_q).abs() <= tol
    }

    pub fn agrees_on_support(&self, tol: f64) -> bool {
        (self.fit_q - self.own_support_q).abs() <= tol
    }
}

/// One random instance with `p ≤ 6`: the PFGMM fit from a random start
/// against the minimum of `Q` over every support, each support solved by
/// weighted least squares on its moments followed by BFGS on the penalized
/// restricted objective.
pub fn oracle_instance(seed: u64) -> OracleOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rng.random_range(3..=6usize);
    let beta0 = DVector::from_fn(p, |_, _| {
        let m = rng.random_range(1.0..3.0);
        if rng.random_bool(0.5) { m } else { -m }
    });
    let ds = random_dataset(&mut rng, &[6; 10], &beta0, 1, 0.5);
    let pr = PfgmmProblem::new(&ds, &ProxySpec::LogNIdentity, &InstrumentSource::CovariateSieve).unwrap();
    let pen = PenaltySpec::scad(0.1).unwrap();
    let unpen = vec![0usize];
    let opts = PfgmmOptions {
        base: FitOptions { unpenalized: unpen.clone(), ..FitOptions::default() },
        init: PfgmmInit::Given(random_start(&mut rng, p, 3.0)),
        ..PfgmmOptions::default()
    };
    let fit = pr.fit(&ds, &pen, &opts).unwrap();
    let fit_q = pr.objective(&fit.beta_hat, &pen, &unpen);

    // moments are affine in β: v(β) = c − Aβ
    let (cf, ch) = pr.moments(&DVector::zeros(p));
    let mut af = DMatrix::zeros(p, p);
    let mut ah = DMatrix::zeros(p, p);
    for k in 0..p {
        let mut e = DVector::zeros(p);
        e[k] = 1.0;
        let (vf, vh) = pr.moments(&e);
        af.set_column(k, &(&cf - vf));
        ah.set_column(k, &(&ch - vh));
    }
    let fit_mask: u32 = (0..p).filter(|&j| fit.beta_hat[j] != 0.0).map(|j| 1 << j).sum();
    let mut oracle_q = pr.objective(&DVector::zeros(p), &pen, &unpen);
    let mut own_support_q = if fit_mask == 0 { oracle_q } else { f64::INFINITY };
    for mask in 1u32..(1 << p) {
        let s: Vec<usize> = (0..p).filter(|j| mask & (1 << j) != 0).collect();
        let rows: Vec<usize> = (0..p).filter(|j| mask & (1 << j) != 0 || unpen.contains(j)).collect();
        // weighted least squares on the moments of `rows`
        let mut lhs = DMatrix::zeros(s.len(), s.len());
        let mut rhs = DVector::zeros(s.len());
        for &j in &rows {
            for (a, c, w) in [(&af, cf[j], pr.weights.w_f[j]), (&ah, ch[j], pr.weights.w_h[j])] {
                let row = DVector::from_iterator(s.len(), s.iter().map(|&k| a[(j, k)]));
                lhs += &row * row.transpose() * w;
                rhs += &row * (w * c);
            }
        }
        let embed = |v: &DVector<f64>| {
            let mut b = DVector::zeros(p);
            for (i, &k) in s.iter().enumerate() {
                b[k] = v[i];
            }
            b
        };
        let f = |v: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
            if v.iter().any(|x| *x == 0.0) {
                return None;
            }
            let val = pr.objective(&embed(v), &pen, &unpen);
            let h = 1e-7;
            let g = DVector::from_fn(v.len(), |i, _| {
                let mut up = v.clone();
                up[i] += h;
                let mut dn = v.clone();
                dn[i] -= h;
                (pr.objective(&embed(&up), &pen, &unpen) - pr.objective(&embed(&dn), &pen, &unpen)) / (2.0 * h)
            });
            Some((val, g))
        };
        let mut starts = Vec::new();
        if let Some(ch) = lhs.clone().cholesky() {
            starts.push(ch.solve(&rhs));
        }
        starts.push(DVector::from_fn(s.len(), |i, _| beta0[s[i]]));
        if mask == fit_mask {
            starts.push(DVector::from_fn(s.len(), |i, _| fit.beta_hat[s[i]]));
        }
        for start in starts {
            if start.iter().any(|x| *x == 0.0) {
                continue;
            }
            let mut best = f(&start).map(|(v, _)| v).unwrap_or(f64::INFINITY);
            let bfgs = BfgsOptions { max_iter: 500, grad_tol: 1e-9, f_tol: 1e-15 };
            if let Some(out) = minimize(f, start.clone(), bfgs) {
                if out.x.iter().all(|x| x.abs() > 1e-6) {
                    best = best.min(out.value);
                }
            }
            oracle_q = oracle_q.min(best);
            if mask == fit_mask {
                own_support_q = own_support_q.min(best);
            }
        }
    }
    OracleOutcome { p, fit_support: fit.active_set.len(), fit_q, oracle_q, own_support_q }
}

/// Midpoint concavity of `P` on a grid (tolerance 1e-12) and `P'` against
/// central differences away from the kinks (tolerance 1e-6).
pub fn penalty_checks() -> Result<(), String> {
    let specs: Vec<(PenaltySpec<f64>, Vec<f64>)> = vec![
        (PenaltySpec::scad(0.1).unwrap(), vec![0.1, 0.37]),
        (PenaltySpec::mcp(0.1, 3.0).unwrap(), vec![0.3]),
        (PenaltySpec::l1(0.1).unwrap(), vec![]),
        (PenaltySpec::hard(0.1).unwrap(), vec![0.1]),
    ];
    for (pen, kinks) in &specs {
        let grid: Vec<f64> = (1..=200).map(|i| i as f64 * 0.005).collect();
        for &t1 in &grid {
            for &t2 in grid.iter().step_by(7) {
                let mid = pen.value((t1 + t2) / 2.0).unwrap();
                let avg = (pen.value(t1).unwrap() + pen.value(t2).unwrap()) / 2.0;
                if mid < avg - 1e-12 {
                    return Err(format!("{pen:?}: midpoint concavity fails at ({t1}, {t2})"));
                }
            }
        }
        let h = 1e-7;
        for &t in &grid {
            if kinks.iter().any(|k| (t - k).abs() < 1e-3) {
                continue;
            }
            let fd = (pen.value(t + h).unwrap() - pen.value(t - h).unwrap()) / (2.0 * h);
            let d = pen.deriv(t).unwrap();
            if (fd - d).abs() > 1e-6 {
                return Err(format!("{pen:?}: derivative {d} vs finite difference {fd} at {t}"));
            }
        }
    }
    let scad = PenaltySpec::scad(0.1).unwrap();
    let zeta: f64 = scad.zeta(&[0.2, 1.0]).unwrap();
    if (zeta - 1.0 / 2.7).abs() > 1e-9 || scad.zeta(&[1.0]).unwrap() != 0.0 {
        return Err(format!("SCAD zeta {zeta}"));
    }
    Ok(())
}

pub struct InjectorCheck {
    pub level1_mc: f64,
    pub level1_formula: f64,
    pub level2_mc: f64,
    pub level2_formula: f64,
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Monte Carlo correlation of an injected covariate with `ε` (level 1,
/// `ρ_e = 6`) and with the random intercept (level 2, `ρ_b = 6`), one row
/// per group so that every draw is independent.
pub fn injector_correlations(draws: usize) -> InjectorCheck {
    let base = SimConfig { groups: draws, group_size: 1, p: 16, seed: 11, reps: 1, ..SimConfig::default() };
    let l1 = SimConfig { endo: Endogeneity::Level1 { rho_e: 6.0, set: EndoSet::Set1 }, ..base.clone() };
    let sim = generate(&l1, 0).unwrap();
    let x: Vec<f64> = sim.ds.groups().iter().map(|g| g.x[(0, 5)]).collect();
    let e: Vec<f64> = sim.eps.iter().map(|e| e[0]).collect();
    let l2 = SimConfig { endo: Endogeneity::Level2Intercept { rho_b: 6.0, set: EndoSet::Set1 }, ..base };
    let sim2 = generate(&l2, 0).unwrap();
    let x2: Vec<f64> = sim2.ds.groups().iter().map(|g| g.x[(0, 5)]).collect();
    let b: Vec<f64> = sim2.b.iter().map(|b| b[0]).collect();
    InjectorCheck {
        level1_mc: corr(&x, &e),
        level1_formula: injected_correlation(6.0, 0.25f64.sqrt()),
        level2_mc: corr(&x2, &b),
        level2_formula: injected_correlation(6.0, 0.56f64.sqrt()),
    }
}
