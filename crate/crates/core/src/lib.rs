//! Coherence-based approximate derivatives.
//!
//! The crate computes a *sequence* of approximate Jacobians for related
//! inputs by reusing directional-derivative information across calls
//! ([`wasp`]), alongside reference differentiators ([`baselines`]), a
//! benchmark suite with exact Jacobians ([`benchmark`]), a
//! pseudoinverse root finder over a synthetic articulated chain
//! ([`chain`], [`root`]) and the experiment harness behind the `wasp`
//! binary ([`experiment`]).

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod benchmark;
pub mod chain;
pub mod error;
pub mod experiment;
pub mod function;
pub mod root;
pub mod tangent;
pub mod wasp;

pub use baselines::{FiniteDifference, SequentialDifferentiator, Spsa, Wasp};
pub use error::{Error, Result};
pub use function::{fd_full_jacobian, fd_jvp, DifferentiableFunction, JvpResult};
pub use tangent::{make_orthonormal_tangents, make_random_tangents, TangentKind, TangentMatrix};
pub use wasp::{close_enough, DerivativeEstimate, WaspCache};
