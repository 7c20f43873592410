//! Folded-concave penalty family (SCAD, MCP, L1, hard thresholding).
//!
//! Every family is piecewise quadratic in `t = |β|`, which gives exact
//! values, one-sided derivatives and curvatures, and an exact global
//! minimizer of the scalar problem `½κ(b − z)² + P(|b|)` used by the
//! coordinate-descent solvers.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum PenaltyFamily {
    Scad,
    Mcp,
    L1,
    HardThreshold,
}

/// Penalty family, regularization level `λ` and shape (`a` for SCAD, `γ`
/// for MCP; ignored otherwise).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySpec<T: Scalar> {
    family: PenaltyFamily,
    lambda: T,
    shape: T,
}

/// `P(t) = c0 + c1·t + c2·t²` on `[lo, hi]` (`hi = None` means unbounded).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece<T: Scalar> {
    pub lo: T,
    pub hi: Option<T>,
    pub c0: T,
    pub c1: T,
    pub c2: T,
}

impl<T: Scalar> Piece<T> {
    fn contains(&self, t: T) -> bool {
        t >= self.lo && self.hi.is_none_or(|h| t <= h)
    }

    fn value(&self, t: T) -> T {
        self.c0 + self.c1 * t + self.c2 * t * t
    }

    fn slope(&self, t: T) -> T {
        self.c1 + T::lit(2.0) * self.c2 * t
    }
}

pub const SCAD_DEFAULT_A: f64 = 3.7;
pub const MCP_DEFAULT_GAMMA: f64 = 3.0;

impl<T: Scalar> PenaltySpec<T> {
    pub fn new(family: PenaltyFamily, lambda: T, shape: T) -> Result<Self> {
        if !lambda.is_finite_value() || !(lambda > T::zero()) {
            return Err(Error::Penalty(format!("lambda must be positive, got {lambda}")));
        }
        match family {
            PenaltyFamily::Scad if !(shape > T::lit(2.0)) => {
                return Err(Error::Penalty(format!("SCAD needs a > 2, got {shape}")))
            }
            PenaltyFamily::Mcp if !(shape > T::one()) => {
                return Err(Error::Penalty(format!("MCP needs gamma > 1, got {shape}")))
            }
            _ => {}
        }
        Ok(Self { family, lambda, shape })
    }

    pub fn scad(lambda: T) -> Result<Self> {
        Self::new(PenaltyFamily::Scad, lambda, T::lit(SCAD_DEFAULT_A))
    }

    pub fn mcp(lambda: T, gamma: T) -> Result<Self> {
        Self::new(PenaltyFamily::Mcp, lambda, gamma)
    }

    pub fn l1(lambda: T) -> Result<Self> {
        Self::new(PenaltyFamily::L1, lambda, T::one())
    }

    pub fn hard(lambda: T) -> Result<Self> {
        Self::new(PenaltyFamily::HardThreshold, lambda, T::one())
    }

    pub fn family(&self) -> PenaltyFamily {
        self.family
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn shape(&self) -> T {
        self.shape
    }

    /// Same family and shape at a different `λ`.
    pub fn with_lambda(&self, lambda: T) -> Result<Self> {
        Self::new(self.family, lambda, self.shape)
    }

    pub fn pieces(&self) -> Vec<Piece<T>> {
        let l = self.lambda;
        let half = T::lit(0.5);
        let zero = T::zero();
        match self.family {
            PenaltyFamily::L1 => vec![Piece { lo: zero, hi: None, c0: zero, c1: l, c2: zero }],
            PenaltyFamily::Scad => {
                let a = self.shape;
                let am1 = a - T::one();
                vec![
                    Piece { lo: zero, hi: Some(l), c0: zero, c1: l, c2: zero },
                    Piece {
                        lo: l,
                        hi: Some(a * l),
                        c0: -l * l * half / am1,
                        c1: a * l / am1,
                        c2: -half / am1,
                    },
                    Piece { lo: a * l, hi: None, c0: (a + T::one()) * l * l * half, c1: zero, c2: zero },
                ]
            }
            PenaltyFamily::Mcp => {
                let g = self.shape;
                vec![
                    Piece { lo: zero, hi: Some(g * l), c0: zero, c1: l, c2: -half / g },
                    Piece { lo: g * l, hi: None, c0: g * l * l * half, c1: zero, c2: zero },
                ]
            }
            PenaltyFamily::HardThreshold => vec![
                Piece { lo: zero, hi: Some(l), c0: zero, c1: T::lit(2.0) * l, c2: -T::one() },
                Piece { lo: l, hi: None, c0: l * l, c1: zero, c2: zero },
            ],
        }
    }

    fn piece_at(&self, t: T) -> Piece<T> {
        let pieces = self.pieces();
        *pieces
            .iter()
            .find(|p| p.contains(t) && p.hi != Some(t))
            .or_else(|| pieces.iter().rev().find(|p| p.contains(t)))
            .expect("pieces cover [0, inf)")
    }

    /// `P_λ(t)` for `t ≥ 0`.
    pub fn value(&self, t: T) -> Result<T> {
        if !(t >= T::zero()) {
            return Err(Error::Penalty(format!("penalty argument must be nonnegative, got {t}")));
        }
        Ok(self.value_unchecked(t))
    }

    pub(crate) fn value_unchecked(&self, t: T) -> T {
        self.piece_at(t).value(t)
    }

    /// `P'_λ(t)` for `t > 0`.
    pub fn deriv(&self, t: T) -> Result<T> {
        if !(t > T::zero()) {
            return Err(Error::Penalty(format!("derivative needs t > 0, got {t}")));
        }
        Ok(self.deriv_unchecked(t))
    }

    pub(crate) fn deriv_unchecked(&self, t: T) -> T {
        self.piece_at(t).slope(t).max(T::zero())
    }

    /// `P'_λ(0+)`.
    pub fn deriv_at_zero_plus(&self) -> T {
        self.pieces()[0].c1
    }

    /// Largest local concavity `sup −P''` over the one-sided neighbourhoods
    /// of `t`.
    pub fn local_concavity(&self, t: T) -> T {
        self.pieces()
            .iter()
            .filter(|p| p.contains(t))
            .fold(T::zero(), |m, p| m.max(-T::lit(2.0) * p.c2))
    }

    /// `ζ(β)`: maximal local concavity of the penalty across the coordinates
    /// of `|β|`.
    pub fn zeta(&self, beta_s: &[T]) -> Result<T> {
        if let Some(j) = beta_s.iter().position(|b| *b == T::zero()) {
            return Err(Error::Penalty(format!("zeta is only defined near nonzero coordinates (index {j} is zero)")));
        }
        Ok(beta_s
            .iter()
            .fold(T::zero(), |m, b| m.max(self.local_concavity(b.abs()))))
    }

    /// Largest local concavity over `[t0, ∞)`.
    pub fn sup_concavity_from(&self, t0: T) -> T {
        self.pieces()
            .iter()
            .filter(|p| p.hi.is_none_or(|h| h >= t0))
            .fold(T::zero(), |m, p| m.max(-T::lit(2.0) * p.c2))
    }

    /// `Σ_j P(|β_j|)` over the coordinates not listed in `unpenalized`.
    pub fn total(&self, beta: &[T], unpenalized: &[usize]) -> T {
        beta.iter()
            .enumerate()
            .filter(|(j, _)| !unpenalized.contains(j))
            .fold(T::zero(), |acc, (_, b)| acc + self.value_unchecked(b.abs()))
    }

    /// Global minimizer of `½κ(b − z)² + P(|b|)` over the real line.
    /// Ties resolve toward the smaller `|b|`.
    pub fn threshold(&self, kappa: T, z: T) -> T {
        if !(kappa > T::zero()) || z == T::zero() {
            return T::zero();
        }
        let a = z.abs();
        let half = T::lit(0.5);
        let obj = |t: T| half * kappa * (t - a) * (t - a) + self.value_unchecked(t);
        let mut best_t = T::zero();
        let mut best = obj(T::zero());
        let consider = |t: T, best_t: &mut T, best: &mut T| {
            let v = obj(t);
            if v < *best || (v == *best && t < *best_t) {
                *best = v;
                *best_t = t;
            }
        };
        for piece in self.pieces() {
            let quad = half * kappa + piece.c2;
            let lin = -kappa * a + piece.c1;
            consider(piece.lo, &mut best_t, &mut best);
            if let Some(hi) = piece.hi {
                consider(hi, &mut best_t, &mut best);
            }
            if quad > T::zero() {
                let mut t = -lin / (T::lit(2.0) * quad);
                if t < piece.lo {
                    t = piece.lo;
                }
                if let Some(hi) = piece.hi {
                    if t > hi {
                        t = hi;
                    }
                }
                consider(t, &mut best_t, &mut best);
            }
        }
        if z < T::zero() {
            -best_t
        } else {
            best_t
        }
    }
}

impl<T: Scalar> fmt::Display for PenaltySpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            PenaltyFamily::Scad => write!(f, "scad:lambda={},a={}", self.lambda, self.shape),
            PenaltyFamily::Mcp => write!(f, "mcp:lambda={},gamma={}", self.lambda, self.shape),
            PenaltyFamily::L1 => write!(f, "l1:lambda={}", self.lambda),
            PenaltyFamily::HardThreshold => write!(f, "hard:lambda={}", self.lambda),
        }
    }
}

impl<T: Scalar> FromStr for PenaltySpec<T> {
    type Err = Error;

    /// Parses `scad:lambda=0.1,a=3.7`, `mcp:lambda=0.1,gamma=3`,
    /// `l1:lambda=0.1` or `hard:lambda=0.1`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let family = match name.trim().to_ascii_lowercase().as_str() {
            "scad" => PenaltyFamily::Scad,
            "mcp" => PenaltyFamily::Mcp,
            "l1" | "lasso" => PenaltyFamily::L1,
            "hard" => PenaltyFamily::HardThreshold,
            other => return Err(Error::Penalty(format!("unknown penalty family `{other}`"))),
        };
        let mut lambda = None;
        let mut shape = None;
        for kv in rest.split(',').map(str::trim).filter(|kv| !kv.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Penalty(format!("expected key=value, got `{kv}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Penalty(format!("cannot parse value in `{kv}`")))?;
            match (family, k.trim()) {
                (_, "lambda") => lambda = Some(v),
                (PenaltyFamily::Scad, "a") | (PenaltyFamily::Mcp, "gamma") => shape = Some(v),
                (_, key) => return Err(Error::Penalty(format!("unexpected key `{key}` for {name}"))),
            }
        }
        let lambda = lambda.ok_or_else(|| Error::Penalty("missing lambda".into()))?;
        let shape = shape.unwrap_or(match family {
            PenaltyFamily::Scad => SCAD_DEFAULT_A,
            PenaltyFamily::Mcp => MCP_DEFAULT_GAMMA,
            _ => 1.0,
        });
        Self::new(family, T::lit(lambda), T::lit(shape))
    }
}

/// One finite-sample surrogate check with its computed sides.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SurrogateCheck {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`; positive when the inequality holds with room.
    pub margin: f64,
}

impl SurrogateCheck {
    fn less(lhs: f64, rhs: f64) -> Self {
        Self { holds: lhs < rhs, lhs, rhs, margin: rhs - lhs }
    }

    fn less_eq(lhs: f64, rhs: f64) -> Self {
        Self { holds: lhs <= rhs, lhs, rhs, margin: rhs - lhs }
    }

    fn vacuous() -> Self {
        Self { holds: true, lhs: 0.0, rhs: 0.0, margin: 0.0 }
    }
}

/// Finite-sample surrogates of the penalty and signal-strength conditions.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PenaltyAssumptionReport {
    /// Concave, nondecreasing, `P(0) = 0` (grid check).
    pub concave_nondecreasing: bool,
    /// `√s · P'(d_n) < d_n`.
    pub deriv_vs_signal: SurrogateCheck,
    /// `sup ζ < 1` over the `d_n/4` ball around the true coefficients.
    pub local_concavity_bounded: SurrogateCheck,
    /// `s √(log p / n) < d_n`.
    pub dimension_vs_signal: SurrogateCheck,
    /// `P'(d_n) · s² ≤ 1`.
    pub deriv_times_s2: SurrogateCheck,
    /// `sup ζ < 1/√(s log p)` over the `d_n/4` ball.
    pub concavity_vs_dimension: SurrogateCheck,
    /// Raw pieces of the composite rate condition, reported without a verdict:
    /// `P'(d_n)`, `1/√(ns)`, `sP'(d_n) + s√(log p/n) + s³ log s / n`, `P'(0+)`.
    pub raw_deriv_at_signal: f64,
    pub raw_inv_sqrt_ns: f64,
    pub raw_composite_rate: f64,
    pub raw_deriv_at_zero: f64,
}

impl PenaltyAssumptionReport {
    /// The three penalty-only surrogates.
    pub fn penalty_conditions_hold(&self) -> bool {
        self.concave_nondecreasing && self.deriv_vs_signal.holds && self.local_concavity_bounded.holds
    }

    pub fn all_hold(&self) -> bool {
        self.penalty_conditions_hold()
            && self.dimension_vs_signal.holds
            && self.deriv_times_s2.holds
            && self.concavity_vs_dimension.holds
    }
}

fn grid_concave_nondecreasing<T: Scalar>(spec: &PenaltySpec<T>, upper: f64) -> bool {
    let steps = 400;
    let pts: Vec<f64> = (0..=steps).map(|k| upper * k as f64 / steps as f64).collect();
    let val = |t: f64| spec.value_unchecked(T::lit(t)).to_f64_lossy();
    if val(0.0) != 0.0 {
        return false;
    }
    let tol = 1e-12;
    pts.windows(2).all(|w| val(w[1]) >= val(w[0]) - tol)
        && pts.windows(3).all(|w| val(w[1]) >= 0.5 * (val(w[0]) + val(w[2])) - tol)
}

/// Evaluates the penalty and dimension/signal conditions at a finite sample
/// size. Every surrogate holds vacuously when `s = 0`.
pub fn check_assumptions_pa<T: Scalar>(
    spec: &PenaltySpec<T>,
    n: usize,
    p: usize,
    s: usize,
    d_n: T,
) -> PenaltyAssumptionReport {
    let dn = d_n.to_f64_lossy();
    let lambda = spec.lambda().to_f64_lossy();
    let shape = spec.shape().to_f64_lossy();
    let concave = grid_concave_nondecreasing(spec, (4.0 * dn).max(2.0 * shape * lambda).max(1.0));
    let pd = if dn > 0.0 { spec.deriv_unchecked(d_n).to_f64_lossy() } else { spec.deriv_at_zero_plus().to_f64_lossy() };
    let p0 = spec.deriv_at_zero_plus().to_f64_lossy();
    let (nf, pf, sf) = (n as f64, p as f64, s as f64);
    // The ball of radius d_n/4 around β_S keeps every |β_j| ≥ 2d_n − d_n/4.
    let zeta_sup = spec.sup_concavity_from(T::lit(1.75 * dn)).to_f64_lossy();
    let log_p = pf.max(2.0).ln();
    if s == 0 {
        return PenaltyAssumptionReport {
            concave_nondecreasing: concave,
            deriv_vs_signal: SurrogateCheck::vacuous(),
            local_concavity_bounded: SurrogateCheck::vacuous(),
            dimension_vs_signal: SurrogateCheck::vacuous(),
            deriv_times_s2: SurrogateCheck::vacuous(),
            concavity_vs_dimension: SurrogateCheck::vacuous(),
            raw_deriv_at_signal: pd,
            raw_inv_sqrt_ns: f64::INFINITY,
            raw_composite_rate: 0.0,
            raw_deriv_at_zero: p0,
        };
    }
    PenaltyAssumptionReport {
        concave_nondecreasing: concave,
        deriv_vs_signal: SurrogateCheck::less(sf.sqrt() * pd, dn),
        local_concavity_bounded: SurrogateCheck::less(zeta_sup, 1.0),
        dimension_vs_signal: SurrogateCheck::less(sf * (log_p / nf).sqrt(), dn),
        deriv_times_s2: SurrogateCheck::less_eq(pd * sf * sf, 1.0),
        concavity_vs_dimension: SurrogateCheck::less(zeta_sup, 1.0 / (sf * log_p).sqrt()),
        raw_deriv_at_signal: pd,
        raw_inv_sqrt_ns: 1.0 / (nf * sf).sqrt(),
        raw_composite_rate: sf * pd + sf * (log_p / nf).sqrt() + sf.powi(3) * sf.ln() / nf,
        raw_deriv_at_zero: p0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Standard SCAD derivative written out independently of the piece table.
    fn scad_deriv_formula(t: f64, lambda: f64, a: f64) -> f64 {
        if t <= lambda {
            lambda
        } else {
            ((a * lambda - t).max(0.0)) / (a - 1.0)
        }
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            let x = a + h * k as f64;
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    fn all_specs() -> Vec<PenaltySpec<f64>> {
        vec![
            PenaltySpec::scad(0.1).unwrap(),
            PenaltySpec::scad(0.7).unwrap(),
            PenaltySpec::mcp(0.1, 3.0).unwrap(),
            PenaltySpec::mcp(0.4, 1.5).unwrap(),
            PenaltySpec::l1(0.1).unwrap(),
            PenaltySpec::hard(0.3).unwrap(),
        ]
    }

    #[test]
    fn zero_at_origin_and_l1_linear() {
        for spec in all_specs() {
            assert_eq!(spec.value(0.0).unwrap(), 0.0);
        }
        assert_relative_eq!(PenaltySpec::l1(0.1).unwrap().value(2.0).unwrap(), 0.2, epsilon = 1e-15);
        assert!(PenaltySpec::l1(0.1).unwrap().value(-1.0).is_err());
    }

    #[test]
    fn scad_plateau_matches_integrated_derivative() {
        let (lambda, a) = (0.1, 3.7);
        let spec = PenaltySpec::scad(lambda).unwrap();
        // Integrate piecewise so the kinks sit on panel boundaries.
        let integral = simpson(|t| scad_deriv_formula(t, lambda, a), 0.0, lambda, 200)
            + simpson(|t| scad_deriv_formula(t, lambda, a), lambda, a * lambda, 200);
        assert_relative_eq!(integral, 0.0235, epsilon = 1e-12);
        for t in [a * lambda, 1.0, 7.0] {
            assert_relative_eq!(spec.value(t).unwrap(), integral, epsilon = 1e-12);
        }
        for t in [0.03f64, 0.1, 0.2, 0.3] {
            let oracle = simpson(|u| scad_deriv_formula(u, lambda, a), 0.0, t.min(lambda), 200)
                + if t > lambda { simpson(|u| scad_deriv_formula(u, lambda, a), lambda, t, 200) } else { 0.0 };
            assert_relative_eq!(spec.value(t).unwrap(), oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn derivative_examples() {
        let spec = PenaltySpec::scad(0.1).unwrap();
        let h = 1e-7;
        let fd = (spec.value(0.05 + h).unwrap() - spec.value(0.05 - h).unwrap()) / (2.0 * h);
        assert_relative_eq!(spec.deriv(0.05).unwrap(), fd, epsilon = 1e-8);
        assert_relative_eq!(spec.deriv(0.05).unwrap(), 0.1, epsilon = 1e-15);
        assert_eq!(spec.deriv(1.0).unwrap(), 0.0);
        assert_relative_eq!(spec.deriv(0.2).unwrap(), scad_deriv_formula(0.2, 0.1, 3.7), epsilon = 1e-14);
        let l1 = PenaltySpec::l1(0.1).unwrap();
        for t in [1e-6, 0.3, 50.0] {
            assert_eq!(l1.deriv(t).unwrap(), 0.1);
        }
        assert!(spec.deriv(0.0).is_err());
    }

    /// Numeric sup of difference quotients `−(P'(t2) − P'(t1))/(t2 − t1)` on a
    /// shrinking window around each coordinate.
    fn zeta_oracle(spec: &PenaltySpec<f64>, beta: &[f64]) -> f64 {
        let mut best = 0.0f64;
        for &b in beta {
            let t = b.abs();
            let eps = 1e-5;
            let grid: Vec<f64> = (0..=20).map(|k| t - eps + 2.0 * eps * k as f64 / 20.0).filter(|u| *u > 0.0).collect();
            for i in 0..grid.len() {
                for j in i + 1..grid.len() {
                    let q = -(spec.deriv(grid[j]).unwrap() - spec.deriv(grid[i]).unwrap()) / (grid[j] - grid[i]);
                    best = best.max(q);
                }
            }
        }
        best
    }

    #[test]
    fn zeta_examples() {
        let scad = PenaltySpec::scad(0.1).unwrap();
        assert_relative_eq!(scad.zeta(&[0.2]).unwrap(), 1.0 / 2.7, epsilon = 1e-12);
        assert_relative_eq!(zeta_oracle(&scad, &[0.2]), 1.0 / 2.7, epsilon = 1e-6);
        assert_eq!(scad.zeta(&[5.0]).unwrap(), 0.0);
        assert_eq!(zeta_oracle(&scad, &[5.0]), 0.0);
        assert_eq!(PenaltySpec::l1(0.1).unwrap().zeta(&[0.05, -3.0]).unwrap(), 0.0);
        // kink at aλ: left side is concave
        assert_relative_eq!(scad.zeta(&[0.37]).unwrap(), 1.0 / 2.7, epsilon = 1e-12);
        assert_relative_eq!(zeta_oracle(&scad, &[0.37]), 1.0 / 2.7, epsilon = 1e-6);
        assert!(scad.zeta(&[1.0, 0.0]).is_err());
        let mcp = PenaltySpec::mcp(0.2, 2.0).unwrap();
        assert_relative_eq!(mcp.zeta(&[0.1, 3.0]).unwrap(), zeta_oracle(&mcp, &[0.1, 3.0]), epsilon = 1e-6);
    }

    #[test]
    fn threshold_is_global_minimizer() {
        for spec in all_specs() {
            for &kappa in &[0.05, 0.3, 1.0, 4.0] {
                for k in -40..=40 {
                    let z = k as f64 * 0.025;
                    let b = spec.threshold(kappa, z);
                    let obj = |x: f64| 0.5 * kappa * (x - z).powi(2) + spec.value(x.abs()).unwrap();
                    let best_grid = (-4000..=4000)
                        .map(|i| obj(i as f64 * 0.0005))
                        .fold(f64::INFINITY, f64::min);
                    assert!(obj(b) <= best_grid + 1e-12, "{spec} kappa={kappa} z={z} b={b}");
                }
            }
        }
    }

    #[test]
    fn threshold_soft_for_l1_and_unbiased_for_scad() {
        let l1 = PenaltySpec::l1(0.1).unwrap();
        assert_relative_eq!(l1.threshold(1.0, 0.5), 0.4, epsilon = 1e-15);
        assert_eq!(l1.threshold(1.0, -0.05), 0.0);
        let scad = PenaltySpec::scad(0.1).unwrap();
        assert_relative_eq!(scad.threshold(1.0, 2.0), 2.0, epsilon = 1e-15);
        assert_relative_eq!(scad.threshold(1.0, -0.15), -0.05, epsilon = 1e-15);
    }

    #[test]
    fn parse_and_display_roundtrip() {
        let s: PenaltySpec<f64> = "scad:lambda=0.1,a=3.7".parse().unwrap();
        assert_eq!(s, PenaltySpec::scad(0.1).unwrap());
        let m: PenaltySpec<f64> = "mcp:lambda=0.1,gamma=3".parse().unwrap();
        assert_eq!(m, PenaltySpec::mcp(0.1, 3.0).unwrap());
        let l: PenaltySpec<f64> = "l1:lambda=0.1".parse().unwrap();
        assert_eq!(l.to_string().parse::<PenaltySpec<f64>>().unwrap(), l);
        assert!("scad:lambda=0.1,a=1.5".parse::<PenaltySpec<f64>>().is_err());
        assert!("ridge:lambda=1".parse::<PenaltySpec<f64>>().is_err());
        assert!("scad:a=3.7".parse::<PenaltySpec<f64>>().is_err());
        assert!(PenaltySpec::<f64>::scad(0.0).is_err());
        assert!(PenaltySpec::<f64>::mcp(0.1, 1.0).is_err());
    }

    #[test]
    fn assumption_report_examples() {
        let scad = PenaltySpec::scad(0.1).unwrap();
        let r = check_assumptions_pa(&scad, 150, 300, 5, 1.0);
        assert_eq!(r.raw_deriv_at_signal, 0.0);
        assert!(r.deriv_vs_signal.holds && r.deriv_times_s2.holds && r.concavity_vs_dimension.holds);
        assert!(r.all_hold());
        assert_relative_eq!(r.dimension_vs_signal.lhs, 5.0 * (300f64.ln() / 150.0).sqrt(), epsilon = 1e-12);

        let l1 = PenaltySpec::l1(0.1).unwrap();
        let r = check_assumptions_pa(&l1, 150, 300, 5, 1.0);
        assert_relative_eq!(r.deriv_vs_signal.lhs, 0.2236, epsilon = 1e-4);
        assert!(r.deriv_vs_signal.holds);
        assert_relative_eq!(r.deriv_times_s2.lhs, 2.5, epsilon = 1e-12);
        assert!(!r.deriv_times_s2.holds);

        let empty = check_assumptions_pa(&l1, 150, 300, 0, 1.0);
        assert!(empty.all_hold());
    }

    #[test]
    fn folded_concave_families_pass_penalty_surrogates_and_l1_does_not() {
        let dn = 1.0;
        for lambda in [0.05, 0.1, 0.25, 0.5] {
            for spec in [PenaltySpec::scad(lambda).unwrap(), PenaltySpec::mcp(lambda, 3.0).unwrap()] {
                assert!(check_assumptions_pa(&spec, 150, 300, 5, dn).penalty_conditions_hold(), "{spec}");
            }
        }
        let l1 = PenaltySpec::l1(0.5 * dn).unwrap();
        let r = check_assumptions_pa(&l1, 150, 300, 5, dn);
        assert!(!r.deriv_vs_signal.holds);
    }

    fn spec_strategy() -> impl Strategy<Value = PenaltySpec<f64>> {
        (0usize..4, 0.01f64..2.0, 1.1f64..6.0).prop_map(|(f, lambda, shape)| match f {
            0 => PenaltySpec::new(PenaltyFamily::Scad, lambda, shape + 1.0).unwrap(),
            1 => PenaltySpec::new(PenaltyFamily::Mcp, lambda, shape).unwrap(),
            2 => PenaltySpec::l1(lambda).unwrap(),
            _ => PenaltySpec::hard(lambda).unwrap(),
        })
    }

    proptest! {
        #[test]
        fn midpoint_concavity(spec in spec_strategy(), t1 in 0.0f64..10.0, t2 in 0.0f64..10.0) {
            let mid = spec.value(0.5 * (t1 + t2)).unwrap();
            let avg = 0.5 * (spec.value(t1).unwrap() + spec.value(t2).unwrap());
            prop_assert!(mid >= avg - 1e-12);
        }

        #[test]
        fn derivative_matches_central_differences(spec in spec_strategy(), t in 0.001f64..10.0) {
            let l = spec.lambda();
            let s = spec.shape();
            let kinks = [l, s * l];
            prop_assume!(kinks.iter().all(|k| (t - k).abs() > 1e-4));
            let h = 1e-6;
            let fd = (spec.value(t + h).unwrap() - spec.value((t - h).max(0.0)).unwrap()) / (t + h - (t - h).max(0.0));
            prop_assert!((spec.deriv(t).unwrap() - fd).abs() < 1e-6);
        }

        #[test]
        fn derivative_nonincreasing(spec in spec_strategy(), t1 in 1e-4f64..10.0, dt in 0.0f64..5.0) {
            prop_assert!(spec.deriv(t1 + dt).unwrap() <= spec.deriv(t1).unwrap() + 1e-12);
        }
    }
}
