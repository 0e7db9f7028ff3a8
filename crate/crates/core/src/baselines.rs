//! Derivative engines behind one sequential interface: WASP, full finite
//! differencing and SPSA.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::function::{fd_full_jacobian, DifferentiableFunction, DEFAULT_EPSILON};
use crate::tangent::{TangentKind, TangentMatrix};
use crate::wasp::{DerivativeEstimate, WaspCache};

/// Default SPSA perturbation magnitude.
pub const DEFAULT_SPSA_C: f64 = 1e-4;

/// Anything that produces the next derivative in a sequence of inputs.
pub trait SequentialDifferentiator {
    fn name(&self) -> &str;

    fn next_derivative(
        &mut self,
        f: &mut DifferentiableFunction,
        x: &DVector<f64>,
    ) -> Result<DerivativeEstimate>;
}

/// Forward-difference Jacobian reported as a derivative estimate.
pub fn fd_differentiator(
    f: &mut DifferentiableFunction,
    x: &DVector<f64>,
    epsilon: f64,
) -> Result<DerivativeEstimate> {
    let before = f.calls();
    let d = fd_full_jacobian(f, x, epsilon)?;
    Ok(DerivativeEstimate {
        d,
        iterations: f.n(),
        calls: f.calls() - before,
    })
}

fn rademacher(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
}

fn spsa_with_perturbation(
    f: &mut DifferentiableFunction,
    x: &DVector<f64>,
    c: f64,
    delta: &DVector<f64>,
) -> Result<DerivativeEstimate> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("SPSA c must be positive, got {c}")));
    }
    let before = f.calls();
    let plus = x + delta * c;
    let minus = x - delta * c;
    let f_plus = f.eval(&plus)?;
    let f_minus = f.eval(&minus)?;
    let g = (f_plus - f_minus) / (2.0 * c);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            point: x.iter().copied().collect(),
        });
    }
    // delta_k is +-1, so g_j / delta_k == g_j * delta_k
    let d: DMatrix<f64> = &g * delta.transpose();
    Ok(DerivativeEstimate {
        d,
        iterations: 1,
        calls: f.calls() - before,
    })
}

/// Single-pair SPSA estimate with a Rademacher perturbation drawn from `seed`.
pub fn spsa_differentiator(
    f: &mut DifferentiableFunction,
    x: &DVector<f64>,
    c: f64,
    seed: u64,
) -> Result<DerivativeEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta = rademacher(&mut rng, f.n());
    spsa_with_perturbation(f, x, c, &delta)
}

#[derive(Debug, Clone)]
pub struct FiniteDifference {
    pub epsilon: f64,
}

impl Default for FiniteDifference {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl SequentialDifferentiator for FiniteDifference {
    fn name(&self) -> &str {
        "FD"
    }

    fn next_derivative(
        &mut self,
        f: &mut DifferentiableFunction,
        x: &DVector<f64>,
    ) -> Result<DerivativeEstimate> {
        fd_differentiator(f, x, self.epsilon)
    }
}

/// SPSA over a sequence; perturbations come from one seeded stream.
#[derive(Debug, Clone)]
pub struct Spsa {
    pub c: f64,
    rng: ChaCha8Rng,
}

impl Spsa {
    pub fn new(c: f64, seed: u64) -> Self {
        Self {
            c,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl SequentialDifferentiator for Spsa {
    fn name(&self) -> &str {
        "SPSA"
    }

    fn next_derivative(
        &mut self,
        f: &mut DifferentiableFunction,
        x: &DVector<f64>,
    ) -> Result<DerivativeEstimate> {
        let delta = rademacher(&mut self.rng, f.n());
        spsa_with_perturbation(f, x, self.c, &delta)
    }
}

/// WASP wrapped as a sequential differentiator.
#[derive(Debug, Clone)]
pub struct Wasp {
    cache: WaspCache,
    pub epsilon: f64,
    name: &'static str,
}

impl Wasp {
    pub fn new(delta_x: TangentMatrix, m: usize, d_theta: f64, d_ell: f64) -> Result<Self> {
        Ok(Self::from_cache(
            WaspCache::new(delta_x, m, d_theta, d_ell)?,
            DEFAULT_EPSILON,
        ))
    }

    pub fn from_cache(cache: WaspCache, epsilon: f64) -> Self {
        let name = match cache.delta_x().kind() {
            TangentKind::Orthonormal => "WASP-O",
            TangentKind::RandomFullRank => "WASP-NO",
        };
        Self {
            cache,
            epsilon,
            name,
        }
    }

    pub fn cache(&self) -> &WaspCache {
        &self.cache
    }

    pub fn cache_mut(&mut self) -> &mut WaspCache {
        &mut self.cache
    }
}

impl SequentialDifferentiator for Wasp {
    fn name(&self) -> &str {
        self.name
    }

    fn next_derivative(
        &mut self,
        f: &mut DifferentiableFunction,
        x: &DVector<f64>,
    ) -> Result<DerivativeEstimate> {
        self.cache.derivative(f, x, self.epsilon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_is_exact_on_linear_and_counts() {
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, -2.0, 0.5, 3.0, 1.0]);
        let mut f = DifferentiableFunction::linear(b.clone());
        let est = fd_differentiator(&mut f, &DVector::from_element(3, 0.4), 1e-6).unwrap();
        assert!((est.d - b).amax() < 1e-8);
        assert_eq!(est.calls, 4);
        assert_eq!(est.iterations, 3);
    }

    #[test]
    fn fd_call_count_n50() {
        let mut f = DifferentiableFunction::new(50, 1, |x| DVector::from_element(1, x.sum()));
        let est = FiniteDifference::default()
            .next_derivative(&mut f, &DVector::zeros(50))
            .unwrap();
        assert_eq!(est.calls, 51);
    }

    #[test]
    fn spsa_scalar_is_central_difference() {
        let mut f = DifferentiableFunction::new(1, 1, |x| x * 2.5);
        for seed in 0..8 {
            let est = spsa_differentiator(&mut f, &DVector::from_element(1, 0.3), 1e-4, seed).unwrap();
            assert!((est.d[(0, 0)] - 2.5).abs() < 1e-9);
            assert_eq!(est.calls, 2);
        }
    }

    #[test]
    fn spsa_constant_function_is_zero() {
        let mut f = DifferentiableFunction::new(4, 3, |_| DVector::from_element(3, 7.0));
        let est = spsa_differentiator(&mut f, &DVector::zeros(4), 1e-4, 5).unwrap();
        assert_eq!(est.d, DMatrix::zeros(3, 4));
    }

    #[test]
    fn spsa_is_deterministic_per_seed_and_two_calls() {
        let mut f = DifferentiableFunction::new(6, 2, |x| {
            DVector::from_vec(vec![x[0] * x[5], x.map(f64::sin).sum()])
        });
        let x = DVector::from_element(6, 0.2);
        let a = spsa_differentiator(&mut f, &x, 1e-4, 3).unwrap();
        let b = spsa_differentiator(&mut f, &x, 1e-4, 3).unwrap();
        assert_eq!(a, b);
        let mut seq = Spsa::new(1e-4, 3);
        for _ in 0..5 {
            assert_eq!(seq.next_derivative(&mut f, &x).unwrap().calls, 2);
        }
        assert!(spsa_differentiator(&mut f, &x, 0.0, 3).is_err());
    }

    #[test]
    fn wasp_wrapper_names_follow_tangent_kind() {
        let o = Wasp::new(crate::tangent::make_orthonormal_tangents(3, 0), 1, 0.1, 0.1).unwrap();
        let no = Wasp::new(crate::tangent::make_random_tangents(3, 0), 1, 0.1, 0.1).unwrap();
        assert_eq!(o.name(), "WASP-O");
        assert_eq!(no.name(), "WASP-NO");
        assert_eq!(FiniteDifference::default().name(), "FD");
        assert_eq!(Spsa::new(1e-4, 0).name(), "SPSA");
    }
}
