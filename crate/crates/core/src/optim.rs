//! Small BFGS minimizer with an Armijo backtracking line search, used for the
//! handful of log-variance parameters.

use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub f_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-7, f_tol: 1e-12 }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome<T: Scalar> {
    pub x: DVector<T>,
    pub value: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f`, where `f(x)` returns `Some((value, gradient))` or `None`
/// when `x` is outside the domain (the line search then backs off).
pub fn minimize<T, F>(mut f: F, x0: DVector<T>, opts: BfgsOptions) -> Option<BfgsOutcome<T>>
where
    T: Scalar,
    F: FnMut(&DVector<T>) -> Option<(T, DVector<T>)>,
{
    let n = x0.len();
    let (mut fx, mut g) = f(&x0)?;
    let mut x = x0;
    let mut h_inv = DMatrix::<T>::identity(n, n);
    let grad_tol = T::lit(opts.grad_tol);
    let f_tol = T::lit(opts.f_tol);
    let c1 = T::lit(1e-4);
    for iter in 0..opts.max_iter {
        if g.amax() < grad_tol {
            return Some(BfgsOutcome { x, value: fx, iterations: iter, converged: true });
        }
        let mut dir = -(&h_inv * &g);
        let mut slope = dir.dot(&g);
        if !(slope < T::zero()) {
            h_inv = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = dir.dot(&g);
        }
        // keep the first step bounded in log-parameter space
        let norm = dir.amax();
        let mut step = if norm > T::lit(5.0) { T::lit(5.0) / norm } else { T::one() };
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &dir * step;
            if let Some((fc, gc)) = f(&cand) {
                if fc.is_finite_value() && fc <= fx + c1 * step * slope {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            step *= T::lit(0.5);
        }
        let Some((xn, fn_, gn)) = accepted else {
            return Some(BfgsOutcome { x, value: fx, iterations: iter, converged: g.amax() < grad_tol.sqrt() });
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        let done = (fx - fn_).abs() <= f_tol * (T::one() + fx.abs());
        if sy > T::lit(1e-12) * s.norm() * y.norm() {
            let rho = T::one() / sy;
            let eye = DMatrix::<T>::identity(n, n);
            let left = &eye - (&s * y.transpose()) * rho;
            let right = &eye - (&y * s.transpose()) * rho;
            h_inv = &left * &h_inv * &right + (&s * s.transpose()) * rho;
        }
        x = xn;
        fx = fn_;
        g = gn;
        if done {
            return Some(BfgsOutcome { x, value: fx, iterations: iter + 1, converged: true });
        }
    }
    let converged = g.amax() < grad_tol;
    Some(BfgsOutcome { x, value: fx, iterations: opts.max_iter, converged })
}
