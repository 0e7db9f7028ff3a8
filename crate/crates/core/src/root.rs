//! Jacobian-pseudoinverse root finding with a pluggable derivative engine.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::baselines::SequentialDifferentiator;
use crate::chain::ConstraintProblem;
use crate::error::{check_dim, Error, Result};
use crate::function::DifferentiableFunction;

/// Singular values below `PINV_RTOL * sigma_max` are dropped.
pub const PINV_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub alpha: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            tol: 1e-4,
            max_iters: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// Every forward pass spent, residual checks included.
    pub calls: u64,
    pub converged: bool,
    pub residual_norm: f64,
    pub runtime_s: f64,
}

/// Truncated-SVD Moore-Penrose pseudoinverse.
pub fn pseudoinverse(j: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = j.shape();
    let svd = j.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if !(sigma_max > 0.0) {
        return DMatrix::zeros(c, r);
    }
    svd.pseudo_inverse(PINV_RTOL * sigma_max)
        .expect("U and V were computed")
}

/// Iterates `x <- x - alpha * J^+ Psi(x)` until `|Psi(x)| <= tol` or the
/// iteration budget runs out.
pub fn solve_residual(
    residual: &mut DifferentiableFunction,
    x0: &DVector<f64>,
    engine: &mut dyn SequentialDifferentiator,
    opts: SolveOptions,
) -> Result<SolveReport> {
    if !(opts.alpha > 0.0 && opts.alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "step scale must lie in (0, 1], got {}",
            opts.alpha
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    check_dim("root finder start", residual.n(), x0.len())?;

    let start = Instant::now();
    let calls_before = residual.calls();
    let mut x = x0.clone();
    let mut iterations = 0;
    let (converged, residual_norm) = loop {
        let psi = residual.eval(&x)?;
        let norm = psi.norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite {
                point: x.iter().copied().collect(),
            });
        }
        if norm <= opts.tol {
            break (true, norm);
        }
        if iterations == opts.max_iters {
            break (false, norm);
        }
        let est = engine.next_derivative(residual, &x)?;
        x -= pseudoinverse(&est.d) * psi * opts.alpha;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                point: x.iter().copied().collect(),
            });
        }
        iterations += 1;
    };
    Ok(SolveReport {
        x,
        iterations,
        calls: residual.calls() - calls_before,
        converged,
        residual_norm,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// [`solve_residual`] on a chain constraint's residual.
pub fn pseudoinverse_solve(
    problem: &mut ConstraintProblem,
    x0: &DVector<f64>,
    engine: &mut dyn SequentialDifferentiator,
    opts: SolveOptions,
) -> Result<SolveReport> {
    solve_residual(&mut problem.residual, x0, engine, opts)
}
