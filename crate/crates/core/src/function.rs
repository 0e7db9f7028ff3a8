//! Counted vector functions and the forward-difference JVP primitive.
//!
//! Every forward pass any engine performs goes through
//! [`DifferentiableFunction::eval`], so call counts reported by the engines
//! are exact.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Default forward-difference step for 64-bit floats.
pub const DEFAULT_EPSILON: f64 = 1e-6;

type EvalFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// A deterministic map `R^n -> R^m` with a forward-pass counter.
pub struct DifferentiableFunction {
    n: usize,
    m: usize,
    eval: Box<EvalFn>,
    calls: u64,
}

impl DifferentiableFunction {
    pub fn new<F>(n: usize, m: usize, eval: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            n,
            m,
            eval: Box::new(eval),
            calls: 0,
        }
    }

    /// `f(x) = B x + c`.
    pub fn affine(b: DMatrix<f64>, c: DVector<f64>) -> Self {
        assert_eq!(b.nrows(), c.len(), "affine offset length must match rows");
        let (m, n) = b.shape();
        Self::new(n, m, move |x| &b * x + &c)
    }

    pub fn linear(b: DMatrix<f64>) -> Self {
        let m = b.nrows();
        Self::affine(b, DVector::zeros(m))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of forward passes performed so far.
    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn reset_calls(&mut self) {
        self.calls = 0;
    }

    /// One forward pass. Increments the call counter by exactly one.
    pub fn eval(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("function input", self.n, x.len())?;
        self.calls += 1;
        let y = (self.eval)(x);
        check_dim("function output", self.m, y.len())?;
        Ok(y)
    }
}

impl std::fmt::Debug for DifferentiableFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DifferentiableFunction")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("calls", &self.calls)
            .finish_non_exhaustive()
    }
}

/// A directional derivative sample `value ~ J(x) * tangent`.
#[derive(Debug, Clone, PartialEq)]
pub struct JvpResult {
    pub tangent: DVector<f64>,
    pub value: DVector<f64>,
    pub epsilon: f64,
}

fn ensure_finite(v: &DVector<f64>, point: &DVector<f64>) -> Result<()> {
    if v.iter().all(|e| e.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            point: point.iter().copied().collect(),
        })
    }
}

/// Forward-difference JVP `(f(x + eps*dx) - f(x)) / eps`.
///
/// `f_at_x` must be `f(x)`; it is shared between all probes at the same
/// input, so this consumes exactly one forward pass.
pub fn fd_jvp(
    f: &mut DifferentiableFunction,
    x: &DVector<f64>,
    dx: &DVector<f64>,
    f_at_x: &DVector<f64>,
    epsilon: f64,
) -> Result<JvpResult> {
    check_dim("jvp input", f.n(), x.len())?;
    check_dim("jvp tangent", f.n(), dx.len())?;
    check_dim("jvp base value", f.m(), f_at_x.len())?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference epsilon must be positive, got {epsilon}"
        )));
    }
    ensure_finite(f_at_x, x)?;
    let probe = x + dx * epsilon;
    let f_probe = f.eval(&probe)?;
    ensure_finite(&f_probe, &probe)?;
    let value = (f_probe - f_at_x) / epsilon;
    Ok(JvpResult {
        tangent: dx.clone(),
        value,
        epsilon,
    })
}

/// Full forward-difference Jacobian along the standard basis (`n + 1` passes).
pub fn fd_full_jacobian(
    f: &mut DifferentiableFunction,
    x: &DVector<f64>,
    epsilon: f64,
) -> Result<DMatrix<f64>> {
    let f_x = f.eval(x)?;
    let n = f.n();
    let mut jac = DMatrix::zeros(f.m(), n);
    let mut e = DVector::zeros(n);
    for i in 0..n {
        e[i] = 1.0;
        let jvp = fd_jvp(f, x, &e, &f_x, epsilon)?;
        jac.set_column(i, &jvp.value);
        e[i] = 0.0;
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_matrix() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 4.0, 3.0, 0.25])
    }

    #[test]
    fn jvp_is_exact_on_linear_maps() {
        let b = sample_matrix();
        let mut f = DifferentiableFunction::linear(b.clone());
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let fx = f.eval(&x).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let jvp = fd_jvp(&mut f, &x, &e1, &fx, 1e-6).unwrap();
        for (a, b) in jvp.value.iter().zip(b.column(0).iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_tangent_gives_zero() {
        let mut f = DifferentiableFunction::new(2, 1, |x| DVector::from_element(1, x[0].sin() * x[1]));
        let x = DVector::from_vec(vec![0.4, 1.1]);
        let fx = f.eval(&x).unwrap();
        let jvp = fd_jvp(&mut f, &x, &DVector::zeros(2), &fx, 1e-6).unwrap();
        assert_eq!(jvp.value, DVector::zeros(1));
    }

    #[test]
    fn full_jacobian_linear_and_call_count() {
        let b = sample_matrix();
        let mut f = DifferentiableFunction::linear(b.clone());
        let x = DVector::from_vec(vec![1.5, 2.0]);
        let jac = fd_full_jacobian(&mut f, &x, 1e-6).unwrap();
        assert!((jac - b).amax() < 1e-8);
        assert_eq!(f.calls(), 3);
    }

    #[test]
    fn full_jacobian_scalar_sine() {
        let mut f = DifferentiableFunction::new(1, 1, |x| x.map(f64::sin));
        let jac = fd_full_jacobian(&mut f, &DVector::zeros(1), 1e-6).unwrap();
        assert!((jac[(0, 0)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shared_base_call_accounting() {
        let mut f = DifferentiableFunction::new(3, 2, |x| {
            DVector::from_vec(vec![x[0] * x[1], x[2].cos()])
        });
        let x = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let fx = f.eval(&x).unwrap();
        for k in 0..5 {
            let mut dx = DVector::zeros(3);
            dx[k % 3] = 1.0;
            fd_jvp(&mut f, &x, &dx, &fx, 1e-6).unwrap();
        }
        assert_eq!(f.calls(), 6);
    }

    #[test]
    fn non_finite_output_is_reported() {
        let mut f = DifferentiableFunction::new(1, 1, |x| {
            DVector::from_element(1, if x[0] > 0.5 { f64::NAN } else { x[0] })
        });
        let x = DVector::from_element(1, 0.0);
        let fx = f.eval(&x).unwrap();
        let err = fd_jvp(&mut f, &x, &DVector::from_element(1, 1.0), &fx, 1.0).unwrap_err();
        match err {
            Error::NonFinite { point } => assert_eq!(point, vec![1.0]),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn dimension_checks() {
        let mut f = DifferentiableFunction::linear(sample_matrix());
        assert!(matches!(
            f.eval(&DVector::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
        let fx = DVector::zeros(3);
        assert!(fd_jvp(&mut f, &DVector::zeros(2), &DVector::zeros(2), &fx, 0.0).is_err());
        let bad = DifferentiableFunction::new(1, 2, |_| DVector::zeros(3)).eval(&DVector::zeros(1));
        assert!(bad.is_err());
    }
}
