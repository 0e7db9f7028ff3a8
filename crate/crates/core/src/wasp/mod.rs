//! Web-of-affine-spaces derivative engine.
//!
//! A [`WaspCache`] carries the tangent matrix `dX`, the web matrix `dF`
//! (one approximate JVP per tangent column) and the precomputed solve
//! matrices for every constraint direction. Each call to
//! [`WaspCache::derivative`] spends one ground-truth JVP per inner
//! iteration and solves
//!
//! ```text
//! min_D || dX^T D^T - dF^T ||_F^2   s.t.   dx_i^T D^T = df_i^T
//! ```
//!
//! in closed form as `D^T = C1_i dF^T + C2_i df_i^T`, with
//!
//! ```text
//! A    = 2 dX dX^T
//! s_i  = dx_i^T A^{-1} dx_i
//! C1_i = A^{-1} (I - s_i^{-1} dx_i dx_i^T A^{-1}) 2 dX
//! C2_i = s_i^{-1} A^{-1} dx_i
//! ```
//!
//! The loop stops as soon as the stale web column agrees with the fresh JVP
//! (see [`close_enough`]) or after `n` iterations, at which point every web
//! column is ground truth for the current input.

mod checkpoint;
mod kkt;

pub use kkt::kkt_oracle;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::function::{fd_jvp, DifferentiableFunction};
use crate::tangent::TangentMatrix;

/// Norms below this are treated as zero by the agreement tests.
pub const ZERO_NORM: f64 = 1e-12;

/// Angle between two vectors in radians; zero when either is (near) zero.
pub fn vector_angle(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na < ZERO_NORM || nb < ZERO_NORM {
        return 0.0;
    }
    unit_angle(a, na, b, nb)
}

/// Angle between nonzero `a` and `b` given their norms. Uses
/// `2 atan2(|a^ - b^|, |a^ + b^|)`, which unlike `acos` of the cosine stays
/// accurate for nearly parallel vectors.
pub(crate) fn unit_angle(a: &DVector<f64>, na: f64, b: &DVector<f64>, nb: f64) -> f64 {
    let (ua, ub) = (a / na, b / nb);
    2.0 * (&ua - &ub).norm().atan2((ua + ub).norm())
}

/// Relative norm discrepancy `| |a| - |b| | / max(|b|, 1e-12)`.
pub fn norm_discrepancy(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a.norm() - b.norm()).abs() / b.norm().max(ZERO_NORM)
}

/// Whether an approximate JVP `a` is close enough to the ground truth `b`.
pub fn close_enough(a: &DVector<f64>, b: &DVector<f64>, d_theta: f64, d_ell: f64) -> bool {
    debug_assert_eq!(a.len(), b.len());
    vector_angle(a, b) <= d_theta && norm_discrepancy(a, b) <= d_ell
}

/// One approximate derivative with its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeEstimate {
    /// The `m x n` derivative matrix.
    pub d: DMatrix<f64>,
    /// Inner iterations spent on this input.
    pub iterations: usize,
    /// Forward passes spent on this input.
    pub calls: u64,
}

/// Snapshot handed to observers after every inner optimization step.
#[derive(Debug)]
pub struct WaspStep<'a> {
    /// Zero-based tangent column used as the constraint.
    pub index: usize,
    pub delta_x_i: DVector<f64>,
    pub delta_f_i: &'a DVector<f64>,
    pub accepted: bool,
    pub d: &'a DMatrix<f64>,
    pub web: &'a DMatrix<f64>,
}

fn check_threshold(name: &str, v: f64) -> Result<()> {
    if v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

/// Mutable state carried along one derivative sequence.
#[derive(Debug, Clone)]
pub struct WaspCache {
    delta_x: TangentMatrix,
    web: DMatrix<f64>,
    c1: Vec<DMatrix<f64>>,
    c2: Vec<DVector<f64>>,
    index: usize,
    d_theta: f64,
    d_ell: f64,
}

impl WaspCache {
    /// Builds the cache for a fixed tangent matrix and `m` outputs. The web
    /// starts at zero, so the first derivative request runs the full `n`
    /// corrective iterations.
    pub fn new(delta_x: TangentMatrix, m: usize, d_theta: f64, d_ell: f64) -> Result<Self> {
        check_threshold("d_theta", d_theta)?;
        check_threshold("d_ell", d_ell)?;
        if m == 0 {
            return Err(Error::InvalidParameter("output dimension must be >= 1".into()));
        }
        let (c1, c2) = solve_matrices(delta_x.matrix())?;
        let n = delta_x.dim();
        Ok(Self {
            delta_x,
            web: DMatrix::zeros(m, n),
            c1,
            c2,
            index: 0,
            d_theta,
            d_ell,
        })
    }

    pub fn n(&self) -> usize {
        self.delta_x.dim()
    }

    pub fn m(&self) -> usize {
        self.web.nrows()
    }

    pub fn delta_x(&self) -> &TangentMatrix {
        &self.delta_x
    }

    pub fn web(&self) -> &DMatrix<f64> {
        &self.web
    }

    /// Zero-based index of the next constraint direction.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn thresholds(&self) -> (f64, f64) {
        (self.d_theta, self.d_ell)
    }

    pub fn set_thresholds(&mut self, d_theta: f64, d_ell: f64) -> Result<()> {
        check_threshold("d_theta", d_theta)?;
        check_threshold("d_ell", d_ell)?;
        self.d_theta = d_theta;
        self.d_ell = d_ell;
        Ok(())
    }

    pub fn c1(&self, i: usize) -> &DMatrix<f64> {
        &self.c1[i]
    }

    pub fn c2(&self, i: usize) -> &DVector<f64> {
        &self.c2[i]
    }

    /// The closed-form constrained solve for direction `i`, given a web
    /// whose column `i` already holds `delta_f_i`. Returns `D` (`m x n`).
    pub fn solve(&self, i: usize, web: &DMatrix<f64>, delta_f_i: &DVector<f64>) -> DMatrix<f64> {
        let d_t = &self.c1[i] * web.transpose() + &self.c2[i] * delta_f_i.transpose();
        d_t.transpose()
    }

    /// Approximate derivative of `f` at `x`, updating the cache.
    pub fn derivative(
        &mut self,
        f: &mut DifferentiableFunction,
        x: &DVector<f64>,
        epsilon: f64,
    ) -> Result<DerivativeEstimate> {
        self.derivative_observed(f, x, epsilon, |_| {})
    }

    /// Like [`derivative`](Self::derivative), calling `observer` after each
    /// inner step with the state right after the web update.
    pub fn derivative_observed<O>(
        &mut self,
        f: &mut DifferentiableFunction,
        x: &DVector<f64>,
        epsilon: f64,
        mut observer: O,
    ) -> Result<DerivativeEstimate>
    where
        O: FnMut(&WaspStep<'_>),
    {
        let n = self.n();
        check_dim("wasp input dimension", n, f.n())?;
        check_dim("wasp output dimension", self.m(), f.m())?;
        check_dim("wasp input", n, x.len())?;

        let calls_before = f.calls();
        let f_x = f.eval(x)?;
        let mut iterations = 0;
        let d = loop {
            let i = self.index;
            let dx_i = self.delta_x.matrix().column(i).into_owned();
            let jvp = fd_jvp(f, x, &dx_i, &f_x, epsilon)?;
            let delta_f_i = jvp.value;

            let accepted = close_enough(
                &self.web.column(i).into_owned(),
                &delta_f_i,
                self.d_theta,
                self.d_ell,
            );
            self.web.set_column(i, &delta_f_i);
            let d = self.solve(i, &self.web, &delta_f_i);
            self.web = &d * self.delta_x.matrix();
            self.index = (i + 1) % n;
            iterations += 1;

            observer(&WaspStep {
                index: i,
                delta_x_i: dx_i,
                delta_f_i: &delta_f_i,
                accepted,
                d: &d,
                web: &self.web,
            });

            if accepted || iterations == n {
                break d;
            }
        };
        Ok(DerivativeEstimate {
            d,
            iterations,
            calls: f.calls() - calls_before,
        })
    }
}

/// `C1_i` and `C2_i` for every tangent column, from one factorization of `A`.
type SolveMatrices = (Vec<DMatrix<f64>>, Vec<DVector<f64>>);

fn solve_matrices(dx: &DMatrix<f64>) -> Result<SolveMatrices> {
    let n = dx.nrows();
    // dX^T = QR gives A = 2 R^T R without forming dX dX^T, so the solves
    // below see the conditioning of dX rather than its square.
    let qr = dx.transpose().qr();
    let r = qr.r();
    let r_max = r.diagonal().amax();
    if !(r_max > 0.0) || r.diagonal().iter().any(|d| !(d.abs() > r_max * f64::EPSILON * n as f64)) {
        return Err(Error::Singular("A = 2 dX dX^T"));
    }
    // A^{-1} 2dX = R^{-1} Q^T
    let a_inv_two_dx = r
        .solve_upper_triangular(&qr.q().transpose())
        .ok_or(Error::Singular("A = 2 dX dX^T"))?;

    let mut c1 = Vec::with_capacity(n);
    let mut c2 = Vec::with_capacity(n);
    for i in 0..n {
        let u = a_inv_two_dx.column(i) * 0.5;
        let s = dx.column(i).dot(&u);
        if !(s > 0.0) {
            return Err(Error::Singular("Schur complement"));
        }
        // A^{-1}(I - s^{-1} dx dx^T A^{-1}) 2dX = A^{-1} 2dX - s^{-1} u (dx^T A^{-1} 2dX)
        let row = dx.column(i).transpose() * &a_inv_two_dx;
        c1.push(&a_inv_two_dx - (&u * row) / s);
        c2.push(u / s);
    }
    Ok((c1, c2))
}
