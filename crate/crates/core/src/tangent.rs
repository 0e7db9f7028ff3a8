//! Tangent matrices: the fixed set of probe directions a WASP cache cycles through.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest singular value accepted for any tangent matrix.
pub const FULL_RANK_TOL: f64 = 1e-10;

/// Re-sampling floor for the non-orthonormal construction.
pub const RANDOM_MIN_SINGULAR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TangentKind {
    Orthonormal,
    RandomFullRank,
}

/// Square `n x n` matrix whose columns are the tangent directions.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentMatrix {
    data: DMatrix<f64>,
    kind: TangentKind,
    seed: u64,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0))
}

fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    m.singular_values().min()
}

impl TangentMatrix {
    /// Wraps an externally supplied matrix after checking it is square and full rank.
    pub fn from_matrix(data: DMatrix<f64>, kind: TangentKind, seed: u64) -> Result<Self> {
        if data.nrows() == 0 || !data.is_square() {
            return Err(Error::InvalidParameter(format!(
                "tangent matrix must be square and non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if min_singular_value(&data) <= FULL_RANK_TOL {
            return Err(Error::Singular("tangent matrix"));
        }
        Ok(Self { data, kind, seed })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn kind(&self) -> TangentKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }
}

/// Random orthonormal tangents: the left singular vectors of a seeded
/// uniform `[-1, 1]` matrix.
pub fn make_orthonormal_tangents(n: usize, seed: u64) -> TangentMatrix {
    assert!(n >= 1, "tangent dimension must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let sample = uniform_matrix(&mut rng, n);
        let svd = sample.svd(true, false);
        if svd.singular_values.min() <= FULL_RANK_TOL {
            continue;
        }
        let u = svd.u.expect("requested U factor");
        return TangentMatrix {
            data: u,
            kind: TangentKind::Orthonormal,
            seed,
        };
    }
}

/// Random full-rank tangents with i.i.d. uniform `[-1, 1]` entries.
pub fn make_random_tangents(n: usize, seed: u64) -> TangentMatrix {
    assert!(n >= 1, "tangent dimension must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let sample = uniform_matrix(&mut rng, n);
        if min_singular_value(&sample) > RANDOM_MIN_SINGULAR {
            return TangentMatrix {
                data: sample,
                kind: TangentKind::RandomFullRank,
                seed,
            };
        }
    }
}
