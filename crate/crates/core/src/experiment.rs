//! Parameter sweeps behind the `wasp` binary: derivative sequences over
//! random walks on benchmark functions (evaluations 1 and 2) and root
//! finding on the synthetic chain (evaluation 3).
//!
//! Every run is a pure function of its configuration and base seed. Jobs
//! run on a rayon pool (size from `WASP_WORKERS`, default all cores) and
//! results are collected in job order, so output is independent of
//! scheduling. Runtime excludes engine setup.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{FiniteDifference, SequentialDifferentiator, Spsa, Wasp, DEFAULT_SPSA_C};
use crate::benchmark::{angular_error, make_random_walk, norm_error, BenchmarkFunction, BenchmarkSpec};
use crate::chain::{make_chain_constraint, sample_feasible_problem, ChainModel, ResidualKind};
use crate::error::{check_dim, Error, Result};
use crate::root::{pseudoinverse_solve, SolveOptions};
use crate::tangent::{make_orthonormal_tangents, make_random_tangents};

pub const CSV_HEADER: &str =
    "eval,sub,condition,n,m,o,w,lambda,d_theta,d_ell,seed,k,runtime_s,calls,angular_err,norm_err,iters,converged";

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "WASP_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "FD")]
    Fd,
    #[serde(rename = "SPSA")]
    Spsa,
    #[serde(rename = "WASP-O")]
    WaspO,
    #[serde(rename = "WASP-NO")]
    WaspNo,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::Fd, Condition::Spsa, Condition::WaspO, Condition::WaspNo];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Fd => "FD",
            Condition::Spsa => "SPSA",
            Condition::WaspO => "WASP-O",
            Condition::WaspNo => "WASP-NO",
        }
    }

    pub fn is_wasp(self) -> bool {
        matches!(self, Condition::WaspO | Condition::WaspNo)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown condition {s:?}")))
    }
}

/// One CSV row. Aggregate rows leave `k` empty; fields that do not apply
/// to a row are empty as well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub eval: u8,
    pub sub: Option<u8>,
    pub condition: Condition,
    pub n: usize,
    pub m: usize,
    pub o: Option<usize>,
    pub w: Option<usize>,
    pub lambda: Option<f64>,
    pub d_theta: Option<f64>,
    pub d_ell: Option<f64>,
    pub seed: u64,
    pub k: Option<usize>,
    pub runtime_s: Option<f64>,
    pub calls: f64,
    pub angular_err: Option<f64>,
    pub norm_err: Option<f64>,
    pub iters: f64,
    pub converged: Option<bool>,
}

/// Settings shared by all evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub seed: u64,
    pub conditions: Vec<Condition>,
    /// When false `runtime_s` is left empty, making whole files reproducible.
    pub timing: bool,
}

impl RunOptions {
    pub fn new(seed: u64, conditions: Vec<Condition>) -> Self {
        Self {
            seed,
            conditions,
            timing: true,
        }
    }
}

/// SplitMix64 finalizer over `(base, stream)`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// Stream tags for derive_seed, one per independent random source.
const STREAM_BENCH: u64 = 1;
const STREAM_WALK: u64 = 2;
const STREAM_TANGENT_O: u64 = 3;
const STREAM_TANGENT_NO: u64 = 4;
const STREAM_SPSA: u64 = 5;
const STREAM_CHAIN: u64 = 6;

fn make_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let workers: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&w| w > 0)
            .ok_or_else(|| Error::InvalidParameter(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(workers);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))
}

fn run_jobs<J, F>(jobs: Vec<J>, work: F) -> Result<Vec<ExperimentRecord>>
where
    J: Send,
    F: Fn(J) -> Result<Vec<ExperimentRecord>> + Sync,
{
    let pool = make_pool()?;
    let chunks: Vec<Result<Vec<ExperimentRecord>>> = pool.install(|| jobs.into_par_iter().map(&work).collect());
    let mut out = Vec::new();
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_count(name: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be at least 1")))
    }
}

/// One point of a derivative-sequence sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub n: usize,
    pub m: usize,
    pub o: usize,
    pub w: usize,
    pub lambda: f64,
    pub d_theta: f64,
    pub d_ell: f64,
}

impl GridPoint {
    fn validate(&self) -> Result<()> {
        check_count("n", self.n)?;
        check_count("m", self.m)?;
        check_count("o", self.o)?;
        check_count("w", self.w)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        check_positive("d_theta", self.d_theta)?;
        check_positive("d_ell", self.d_ell)
    }
}

/// Parameter overrides; `None` keeps the sub-experiment default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub n: Option<Vec<usize>>,
    pub m: Option<usize>,
    pub o: Option<usize>,
    pub w: Option<usize>,
    pub lambda: Option<Vec<f64>>,
    pub d_theta: Option<Vec<f64>>,
    pub d_ell: Option<Vec<f64>>,
}

/// Pairs threshold lists positionally; a missing list mirrors the other.
fn threshold_pairs(d_theta: &Option<Vec<f64>>, d_ell: &Option<Vec<f64>>) -> Result<Option<Vec<(f64, f64)>>> {
    match (d_theta, d_ell) {
        (None, None) => Ok(None),
        (Some(a), None) => Ok(Some(a.iter().map(|&x| (x, x)).collect())),
        (None, Some(b)) => Ok(Some(b.iter().map(|&x| (x, x)).collect())),
        (Some(a), Some(b)) if a.len() == b.len() => Ok(Some(a.iter().copied().zip(b.iter().copied()).collect())),
        (Some(a), Some(b)) => Err(Error::InvalidParameter(format!(
            "--d-theta has {} values but --d-ell has {}",
            a.len(),
            b.len()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eval1Config {
    pub sub: u8,
    pub points: Vec<GridPoint>,
    /// Independent repetitions per point, each with its own derived seed.
    pub trials: usize,
}

impl Eval1Config {
    /// Default grid of a sub-experiment, optionally at full size.
    pub fn new(sub: u8, full_scale: bool, trials: usize, overrides: &Overrides) -> Result<Self> {
        let base = GridPoint {
            n: 1,
            m: 1,
            o: 1000,
            w: 100,
            lambda: 0.05,
            d_theta: 0.1,
            d_ell: 0.1,
        };
        let (ns, lambdas): (Vec<usize>, Vec<f64>) = match sub {
            1 if full_scale => (std::iter::once(1).chain((50..=1000).step_by(50)).collect(), vec![base.lambda]),
            1 => (vec![1, 50, 100, 150, 200], vec![base.lambda]),
            2 => (vec![1, 10, 20, 30, 40, 50], vec![base.lambda]),
            3 => (vec![10], vec![0.001, 0.01, 0.1, 1.0, 10.0]),
            _ => return Err(Error::InvalidParameter(format!("sub-experiment must be 1, 2 or 3, got {sub}"))),
        };
        let ns = overrides.n.clone().unwrap_or(ns);
        let lambdas = overrides.lambda.clone().unwrap_or(lambdas);
        let ds = threshold_pairs(&overrides.d_theta, &overrides.d_ell)?.unwrap_or(vec![(base.d_theta, base.d_ell)]);
        let mut points = Vec::new();
        for &n in &ns {
            for &lambda in &lambdas {
                for &(d_theta, d_ell) in &ds {
                    let m = overrides.m.unwrap_or(if sub == 1 { 1 } else { n });
                    let p = GridPoint {
                        n,
                        m,
                        o: overrides.o.unwrap_or(base.o),
                        w: overrides.w.unwrap_or(base.w),
                        lambda,
                        d_theta,
                        d_ell,
                    };
                    p.validate()?;
                    points.push(p);
                }
            }
        }
        check_count("trials", trials)?;
        if points.is_empty() {
            return Err(Error::InvalidParameter("empty parameter grid".into()));
        }
        Ok(Self { sub, points, trials })
    }
}

fn make_engine(
    condition: Condition,
    n: usize,
    m: usize,
    d_theta: f64,
    d_ell: f64,
    seed: u64,
) -> Result<Box<dyn SequentialDifferentiator + Send>> {
    Ok(match condition {
        Condition::Fd => Box::new(FiniteDifference::default()),
        Condition::Spsa => Box::new(Spsa::new(DEFAULT_SPSA_C, derive_seed(seed, STREAM_SPSA))),
        Condition::WaspO => Box::new(Wasp::new(
            make_orthonormal_tangents(n, derive_seed(seed, STREAM_TANGENT_O)),
            m,
            d_theta,
            d_ell,
        )?),
        Condition::WaspNo => Box::new(Wasp::new(
            make_random_tangents(n, derive_seed(seed, STREAM_TANGENT_NO)),
            m,
            d_theta,
            d_ell,
        )?),
    })
}

/// Per-derivative measurements of one engine over one walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSample {
    pub runtime_s: f64,
    pub calls: u64,
    pub iterations: usize,
    pub angular_err: f64,
    pub norm_err: f64,
}

/// Runs `engine` along every waypoint and scores each estimate against the
/// matching exact Jacobian in `truths`.
pub fn run_sequence(
    engine: &mut dyn SequentialDifferentiator,
    bench: &BenchmarkFunction,
    waypoints: &[DVector<f64>],
    truths: &[DMatrix<f64>],
) -> Result<Vec<StepSample>> {
    check_dim("exact Jacobians", waypoints.len(), truths.len())?;
    let mut f = bench.to_function();
    let mut out = Vec::with_capacity(waypoints.len());
    for (x, truth) in waypoints.iter().zip(truths) {
        let before = f.calls();
        let start = Instant::now();
        let est = engine.next_derivative(&mut f, x)?;
        let runtime_s = start.elapsed().as_secs_f64();
        let calls = f.calls() - before;
        debug_assert_eq!(calls, est.calls);
        out.push(StepSample {
            runtime_s,
            calls,
            iterations: est.iterations,
            angular_err: angular_error(&est.d, truth),
            norm_err: norm_error(&est.d, truth),
        });
    }
    Ok(out)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    sum / count.max(1) as f64
}

fn wasp_thresholds(c: Condition, d_theta: f64, d_ell: f64) -> (Option<f64>, Option<f64>) {
    if c.is_wasp() {
        (Some(d_theta), Some(d_ell))
    } else {
        (None, None)
    }
}

/// Evaluation 1: one aggregate row per grid point, trial and condition.
pub fn run_eval1(cfg: &Eval1Config, opts: &RunOptions) -> Result<Vec<ExperimentRecord>> {
    let mut jobs = Vec::new();
    for (pi, p) in cfg.points.iter().enumerate() {
        for t in 0..cfg.trials {
            jobs.push((*p, derive_seed(opts.seed, (pi * cfg.trials + t) as u64)));
        }
    }
    run_jobs(jobs, |(p, seed)| {
        // every condition sees the same function and walk
        let bench = BenchmarkFunction::from_spec(&BenchmarkSpec::new(p.n, p.m, p.o, derive_seed(seed, STREAM_BENCH)))?;
        let walk = make_random_walk(p.n, p.w, p.lambda, derive_seed(seed, STREAM_WALK))?;
        let truths: Vec<DMatrix<f64>> = walk.waypoints.iter().map(|x| bench.jacobian(x)).collect();
        let mut rows = Vec::with_capacity(opts.conditions.len());
        for &c in &opts.conditions {
            let mut engine = make_engine(c, p.n, p.m, p.d_theta, p.d_ell, seed)?;
            let samples = run_sequence(engine.as_mut(), &bench, &walk.waypoints, &truths)?;
            let (d_theta, d_ell) = wasp_thresholds(c, p.d_theta, p.d_ell);
            rows.push(ExperimentRecord {
                eval: 1,
                sub: Some(cfg.sub),
                condition: c,
                n: p.n,
                m: p.m,
                o: Some(p.o),
                w: Some(p.w),
                lambda: Some(p.lambda),
                d_theta,
                d_ell,
                seed,
                k: None,
                runtime_s: opts.timing.then(|| mean(samples.iter().map(|s| s.runtime_s))),
                calls: mean(samples.iter().map(|s| s.calls as f64)),
                angular_err: Some(mean(samples.iter().map(|s| s.angular_err))),
                norm_err: Some(mean(samples.iter().map(|s| s.norm_err))),
                iters: mean(samples.iter().map(|s| s.iterations as f64)),
                converged: None,
            });
        }
        Ok(rows)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eval2Config {
    pub n: usize,
    pub m: usize,
    pub o: usize,
    pub w: usize,
    pub lambda: f64,
    pub thresholds: Vec<(f64, f64)>,
}

impl Eval2Config {
    pub fn new(full_scale: bool, overrides: &Overrides) -> Result<Self> {
        let n = match overrides.n.as_deref() {
            None => 50,
            Some([n]) => *n,
            Some(_) => return Err(Error::InvalidParameter("eval2 takes a single --n".into())),
        };
        let lambda = match overrides.lambda.as_deref() {
            None => 0.05,
            Some([l]) => *l,
            Some(_) => return Err(Error::InvalidParameter("eval2 takes a single --lambda".into())),
        };
        let thresholds = threshold_pairs(&overrides.d_theta, &overrides.d_ell)?
            .unwrap_or_else(|| [0.001, 0.01, 0.1, 0.25, 0.5, 0.75, 1.0].iter().map(|&x| (x, x)).collect());
        let cfg = Self {
            n,
            m: overrides.m.unwrap_or(1),
            o: overrides.o.unwrap_or(1000),
            w: overrides.w.unwrap_or(if full_scale { 50_000 } else { 5_000 }),
            lambda,
            thresholds,
        };
        for &(d_theta, d_ell) in &cfg.thresholds {
            GridPoint {
                n: cfg.n,
                m: cfg.m,
                o: cfg.o,
                w: cfg.w,
                lambda: cfg.lambda,
                d_theta,
                d_ell,
            }
            .validate()?;
        }
        if cfg.thresholds.is_empty() {
            return Err(Error::InvalidParameter("no threshold settings".into()));
        }
        Ok(cfg)
    }
}

/// Evaluation 2: per-derivative rows along one long walk. All WASP runs
/// share one tangent matrix per kind; FD and SPSA run once.
pub fn run_eval2(cfg: &Eval2Config, opts: &RunOptions) -> Result<Vec<ExperimentRecord>> {
    let seed = opts.seed;
    let bench = BenchmarkFunction::from_spec(&BenchmarkSpec::new(cfg.n, cfg.m, cfg.o, derive_seed(seed, STREAM_BENCH)))?;
    let walk = make_random_walk(cfg.n, cfg.w, cfg.lambda, derive_seed(seed, STREAM_WALK))?;
    let shared_o = make_orthonormal_tangents(cfg.n, derive_seed(seed, STREAM_TANGENT_O));
    let shared_no = make_random_tangents(cfg.n, derive_seed(seed, STREAM_TANGENT_NO));
    let truths: Vec<DMatrix<f64>> = walk.waypoints.iter().map(|x| bench.jacobian(x)).collect();

    let mut jobs: Vec<(Condition, Option<(f64, f64)>)> = Vec::new();
    for &c in &opts.conditions {
        if c.is_wasp() {
            jobs.extend(cfg.thresholds.iter().map(|&t| (c, Some(t))));
        } else {
            jobs.push((c, None));
        }
    }
    run_jobs(jobs, |(c, thresholds)| {
        let mut engine: Box<dyn SequentialDifferentiator> = match (c, thresholds) {
            (Condition::WaspO, Some((a, b))) => Box::new(Wasp::new(shared_o.clone(), cfg.m, a, b)?),
            (Condition::WaspNo, Some((a, b))) => Box::new(Wasp::new(shared_no.clone(), cfg.m, a, b)?),
            _ => make_engine(c, cfg.n, cfg.m, 1.0, 1.0, seed)?,
        };
        let samples = run_sequence(engine.as_mut(), &bench, &walk.waypoints, &truths)?;
        Ok(samples
            .iter()
            .enumerate()
            .map(|(k, s)| ExperimentRecord {
                eval: 2,
                sub: None,
                condition: c,
                n: cfg.n,
                m: cfg.m,
                o: Some(cfg.o),
                w: Some(cfg.w),
                lambda: Some(cfg.lambda),
                d_theta: thresholds.map(|t| t.0),
                d_ell: thresholds.map(|t| t.1),
                seed,
                k: Some(k),
                runtime_s: opts.timing.then_some(s.runtime_s),
                calls: s.calls as f64,
                angular_err: Some(s.angular_err),
                norm_err: Some(s.norm_err),
                iters: s.iterations as f64,
                converged: None,
            })
            .collect())
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eval3Config {
    pub trials: usize,
    pub solve: SolveOptions,
    pub d_theta: f64,
    pub d_ell: f64,
    pub kind: ResidualKind,
}

impl Eval3Config {
    pub fn new(full_scale: bool, trials: Option<usize>, max_iters: Option<usize>, overrides: &Overrides) -> Result<Self> {
        let single = |v: &Option<Vec<f64>>, name: &str| -> Result<f64> {
            match v.as_deref() {
                None => Ok(0.1),
                Some([x]) => Ok(*x),
                Some(_) => Err(Error::InvalidParameter(format!("eval3 takes a single --{name}"))),
            }
        };
        let cfg = Self {
            trials: trials.unwrap_or(if full_scale { 50 } else { 10 }),
            solve: SolveOptions {
                max_iters: max_iters.unwrap_or(SolveOptions::default().max_iters),
                ..SolveOptions::default()
            },
            d_theta: single(&overrides.d_theta, "d-theta")?,
            d_ell: single(&overrides.d_ell, "d-ell")?,
            kind: ResidualKind::Displacement,
        };
        check_count("trials", cfg.trials)?;
        check_positive("d_theta", cfg.d_theta)?;
        check_positive("d_ell", cfg.d_ell)?;
        Ok(cfg)
    }
}

/// Evaluation 3: one row per trial and condition on the 24-dof chain.
/// `k` is the trial index.
pub fn run_eval3(cfg: &Eval3Config, opts: &RunOptions) -> Result<Vec<ExperimentRecord>> {
    let chain = ChainModel::quadruped_with_arm();
    let mut jobs = Vec::new();
    for t in 0..cfg.trials {
        let seed = derive_seed(opts.seed, t as u64);
        for &c in &opts.conditions {
            jobs.push((t, seed, c));
        }
    }
    run_jobs(jobs, |(t, seed, c)| {
        let sample = sample_feasible_problem(&chain, derive_seed(seed, STREAM_CHAIN))?;
        let mut problem = make_chain_constraint(chain.clone(), sample.targets, cfg.kind)?;
        let (n, m) = (problem.residual.n(), problem.residual.m());
        let mut engine = make_engine(c, n, m, cfg.d_theta, cfg.d_ell, seed)?;
        let start = Instant::now();
        let report = pseudoinverse_solve(&mut problem, &sample.x0, engine.as_mut(), cfg.solve)?;
        let runtime_s = start.elapsed().as_secs_f64();
        let (d_theta, d_ell) = wasp_thresholds(c, cfg.d_theta, cfg.d_ell);
        Ok(vec![ExperimentRecord {
            eval: 3,
            sub: None,
            condition: c,
            n,
            m,
            o: None,
            w: None,
            lambda: None,
            d_theta,
            d_ell,
            seed,
            k: Some(t),
            runtime_s: opts.timing.then_some(runtime_s),
            calls: report.calls as f64,
            angular_err: None,
            norm_err: None,
            iters: report.iterations as f64,
            converged: Some(report.converged),
        }])
    })
}

/// Writes `#`-prefixed comment lines (plus a timestamp), the header and the rows.
pub fn write_csv(path: impl AsRef<Path>, comments: &[String], records: &[ExperimentRecord]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    writeln!(file, "# generated_unix_s={stamp}")?;
    for c in comments {
        writeln!(file, "# {c}")?;
    }
    writeln!(file, "{CSV_HEADER}")?;
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ExperimentRecord>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::InvalidParameter(format!("unexpected CSV header {header:?}")));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}
