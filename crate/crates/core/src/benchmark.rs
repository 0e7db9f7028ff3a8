//! Benchmark apparatus: random sine/cosine compositions with an exact
//! Jacobian, random-walk input sequences, and row-wise error metrics.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::function::DifferentiableFunction;
use crate::wasp::{unit_angle, ZERO_NORM};

/// Parameters that fully determine a benchmark function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub n: usize,
    pub m: usize,
    pub o: usize,
    pub seed: u64,
}

impl BenchmarkSpec {
    pub fn new(n: usize, m: usize, o: usize, seed: u64) -> Self {
        Self { n, m, o, seed }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.o == 0 {
            return Err(Error::InvalidParameter(format!(
                "benchmark dimensions must be >= 1, got n={} m={} o={}",
                self.n, self.m, self.o
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Sin,
    Cos,
}

impl Op {
    fn apply(self, z: f64) -> f64 {
        match self {
            Op::Sin => libm::sin(z),
            Op::Cos => libm::cos(z),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Op::Sin => libm::cos(z),
            Op::Cos => -libm::sin(z),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub op: Op,
    pub weight: f64,
    pub input: usize,
}

/// One output: `v_0 = x[first_input]`, `v_t = op_t(w_t * v_{t-1} + x[a_t])`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputRecipe {
    pub first_input: usize,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkFunction {
    n: usize,
    recipes: Vec<OutputRecipe>,
    /// Step-major copy of the recipes (`[t * m + j]`), present when every
    /// output has the same number of steps.
    packed: Option<Vec<Step>>,
}

impl BenchmarkFunction {
    pub fn from_spec(spec: &BenchmarkSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let recipes = (0..spec.m)
            .map(|_| {
                let first_input = rng.random_range(0..spec.n);
                let steps = (0..spec.o)
                    .map(|_| Step {
                        op: if rng.random_bool(0.5) { Op::Sin } else { Op::Cos },
                        weight: rng.random_range(-2.0..=2.0),
                        input: rng.random_range(0..spec.n),
                    })
                    .collect();
                OutputRecipe { first_input, steps }
            })
            .collect();
        Ok(Self::assemble(spec.n, recipes))
    }

    /// Hand-built recipes, e.g. for small worked examples.
    pub fn from_recipes(n: usize, recipes: Vec<OutputRecipe>) -> Result<Self> {
        let in_range = |i: usize| i < n;
        let valid = n > 0
            && !recipes.is_empty()
            && recipes.iter().all(|r| {
                !r.steps.is_empty()
                    && in_range(r.first_input)
                    && r.steps.iter().all(|s| in_range(s.input))
            });
        if !valid {
            return Err(Error::InvalidParameter("malformed benchmark recipe".into()));
        }
        Ok(Self::assemble(n, recipes))
    }

    fn assemble(n: usize, recipes: Vec<OutputRecipe>) -> Self {
        let o = recipes[0].steps.len();
        let packed = recipes.iter().all(|r| r.steps.len() == o).then(|| {
            (0..o)
                .flat_map(|t| recipes.iter().map(move |r| r.steps[t]))
                .collect()
        });
        Self { n, recipes, packed }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.recipes.len()
    }

    pub fn recipes(&self) -> &[OutputRecipe] {
        &self.recipes
    }

    /// Runs all output recurrences in lockstep; they are independent, so
    /// this keeps several trig evaluations in flight at once.
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::from_iterator(self.recipes.len(), self.recipes.iter().map(|r| x[r.first_input]));
        match &self.packed {
            Some(packed) => {
                for row in packed.chunks_exact(self.recipes.len()) {
                    for (vj, s) in v.iter_mut().zip(row) {
                        *vj = s.op.apply(s.weight * *vj + x[s.input]);
                    }
                }
            }
            None => {
                for (vj, r) in v.iter_mut().zip(&self.recipes) {
                    *vj = r.steps.iter().fold(*vj, |acc, s| s.op.apply(s.weight * acc + x[s.input]));
                }
            }
        }
        v
    }

    /// Exact Jacobian by the chain rule through each recurrence, swept
    /// backwards so each row costs `O(o)`.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.recipes.len(), self.n);
        let mut local = Vec::new();
        for (j, r) in self.recipes.iter().enumerate() {
            local.clear();
            let mut v = x[r.first_input];
            for s in &r.steps {
                let z = s.weight * v + x[s.input];
                local.push(s.op.derivative(z));
                v = s.op.apply(z);
            }
            let mut adj = 1.0;
            for (s, &dz) in r.steps.iter().zip(&local).rev() {
                let g = adj * dz;
                jac[(j, s.input)] += g;
                adj = g * s.weight;
            }
            jac[(j, r.first_input)] += adj;
        }
        jac
    }

    pub fn to_function(&self) -> DifferentiableFunction {
        let this = self.clone();
        DifferentiableFunction::new(self.n, self.m(), move |x| this.eval(x))
    }
}

pub fn make_benchmark(spec: &BenchmarkSpec) -> Result<DifferentiableFunction> {
    Ok(BenchmarkFunction::from_spec(spec)?.to_function())
}

pub fn benchmark_analytic_jacobian(spec: &BenchmarkSpec, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_dim("benchmark input", spec.n, x.len())?;
    Ok(BenchmarkFunction::from_spec(spec)?.jacobian(x))
}

/// A sequence of inputs with constant step length.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomWalk {
    pub waypoints: Vec<DVector<f64>>,
    pub lambda: f64,
    pub seed: u64,
}

/// `w` waypoints starting uniform in `[-1, 1]^n`, each step `lambda` along
/// a uniformly random unit direction.
pub fn make_random_walk(n: usize, w: usize, lambda: f64, seed: u64) -> Result<RandomWalk> {
    if n == 0 || w == 0 || !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "random walk needs n >= 1, w >= 1, finite lambda >= 0 (got n={n} w={w} lambda={lambda})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
    let mut waypoints = Vec::with_capacity(w);
    waypoints.push(x.clone());
    for _ in 1..w {
        let dir = loop {
            let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = g.norm();
            if norm > 1e-12 {
                break g / norm;
            }
        };
        x += dir * lambda;
        waypoints.push(x.clone());
    }
    Ok(RandomWalk {
        waypoints,
        lambda,
        seed,
    })
}

fn row_pairs<'a>(
    estimate: &'a DMatrix<f64>,
    truth: &'a DMatrix<f64>,
) -> impl Iterator<Item = (DVector<f64>, DVector<f64>)> + 'a {
    assert_eq!(estimate.shape(), truth.shape(), "metric inputs must share a shape");
    (0..truth.nrows()).map(|j| {
        (
            estimate.row(j).transpose(),
            truth.row(j).transpose(),
        )
    })
}

/// Mean row-wise angle (radians) between estimate and truth.
pub fn angular_error(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    let rows = truth.nrows().max(1) as f64;
    row_pairs(estimate, truth)
        .map(|(e, t)| {
            let (ne, nt) = (e.norm(), t.norm());
            match (ne < ZERO_NORM, nt < ZERO_NORM) {
                (true, true) => 0.0,
                (true, false) | (false, true) => FRAC_PI_2,
                _ => unit_angle(&e, ne, &t, nt),
            }
        })
        .sum::<f64>()
        / rows
}

/// Mean row-wise relative norm discrepancy.
pub fn norm_error(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    let rows = truth.nrows().max(1) as f64;
    row_pairs(estimate, truth)
        .map(|(e, t)| (e.norm() - t.norm()).abs() / t.norm().max(ZERO_NORM))
        .sum::<f64>()
        / rows
}
