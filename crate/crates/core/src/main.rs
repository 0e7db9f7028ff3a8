use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wasp::experiment::{
    read_csv, run_eval1, run_eval2, run_eval3, write_csv, Condition, Eval1Config, Eval2Config, Eval3Config,
    ExperimentRecord, Overrides, RunOptions,
};

#[derive(Parser)]
#[command(name = "wasp", version, about = "Derivative-sequence experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derivative sequences on benchmark functions, aggregated per grid point.
    Eval1 {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        sub: u8,
        #[command(flatten)]
        common: Common,
    },
    /// One long sequence per threshold setting, one row per derivative.
    Eval2 {
        #[command(flatten)]
        common: Common,
    },
    /// Pseudoinverse root finding on the 24-dof synthetic chain.
    Eval3 {
        #[command(flatten)]
        common: Common,
    },
    /// Print per-condition means of a result file.
    Summary { path: PathBuf },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    o: Option<usize>,
    #[arg(long)]
    w: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    #[arg(long = "d-theta", value_delimiter = ',')]
    d_theta: Option<Vec<f64>>,
    #[arg(long = "d-ell", value_delimiter = ',')]
    d_ell: Option<Vec<f64>>,
    /// Comma-separated subset of FD, SPSA, WASP-O, WASP-NO.
    #[arg(long, value_delimiter = ',')]
    conditions: Option<Vec<String>>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Repetitions per grid point (eval1) or solve trials (eval3).
    #[arg(long)]
    trials: Option<usize>,
    /// Use the full-size grids instead of the desk-scale defaults.
    #[arg(long)]
    full_scale: bool,
    /// Leave runtime_s empty so repeated runs produce identical files.
    #[arg(long)]
    no_timing: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            n: self.n.clone(),
            m: self.m,
            o: self.o,
            w: self.w,
            lambda: self.lambda.clone(),
            d_theta: self.d_theta.clone(),
            d_ell: self.d_ell.clone(),
        }
    }

    fn run_options(&self, default: &[Condition]) -> wasp::Result<RunOptions> {
        let conditions = match &self.conditions {
            None => default.to_vec(),
            Some(list) => list.iter().map(|s| s.trim().parse()).collect::<wasp::Result<_>>()?,
        };
        let mut opts = RunOptions::new(self.seed, conditions);
        opts.timing = !self.no_timing;
        Ok(opts)
    }

    fn comments(&self, what: String) -> Vec<String> {
        vec![
            what,
            format!("seed={} full_scale={} timing={}", self.seed, self.full_scale, !self.no_timing),
        ]
    }
}

fn run(cli: Cli) -> wasp::Result<()> {
    match cli.command {
        Command::Eval1 { sub, common } => {
            let cfg = Eval1Config::new(sub, common.full_scale, common.trials.unwrap_or(10), &common.overrides())?;
            let opts = common.run_options(&Condition::ALL)?;
            let records = run_eval1(&cfg, &opts)?;
            let comments = common.comments(format!("eval1 sub={sub} points={} trials={}", cfg.points.len(), cfg.trials));
            write_csv(&common.out, &comments, &records)?;
            eprintln!("wrote {} rows to {}", records.len(), common.out.display());
        }
        Command::Eval2 { common } => {
            let cfg = Eval2Config::new(common.full_scale, &common.overrides())?;
            let opts = common.run_options(&[Condition::Fd, Condition::WaspO])?;
            let records = run_eval2(&cfg, &opts)?;
            let comments = common.comments(format!(
                "eval2 n={} m={} o={} w={} lambda={} settings={}",
                cfg.n,
                cfg.m,
                cfg.o,
                cfg.w,
                cfg.lambda,
                cfg.thresholds.len()
            ));
            write_csv(&common.out, &comments, &records)?;
            eprintln!("wrote {} rows to {}", records.len(), common.out.display());
        }
        Command::Eval3 { common } => {
            let cfg = Eval3Config::new(common.full_scale, common.trials, common.max_iters, &common.overrides())?;
            let opts = common.run_options(&Condition::ALL)?;
            let records = run_eval3(&cfg, &opts)?;
            let comments = common.comments(format!(
                "eval3 trials={} alpha={} tol={} max_iters={} residual={}",
                cfg.trials,
                cfg.solve.alpha,
                cfg.solve.tol,
                cfg.solve.max_iters,
                cfg.kind.as_str()
            ));
            write_csv(&common.out, &comments, &records)?;
            eprintln!("wrote {} rows to {}", records.len(), common.out.display());
        }
        Command::Summary { path } => summarize(&read_csv(path)?),
    }
    Ok(())
}

type GroupKey = (u8, Option<u8>, Condition, usize, usize);

fn summarize(records: &[ExperimentRecord]) {
    let mut groups: Vec<(GroupKey, Vec<&ExperimentRecord>)> = Vec::new();
    for r in records {
        let key = (r.eval, r.sub, r.condition, r.n, r.m);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    println!("eval sub condition n m rows calls iters angular_err norm_err converged");
    for ((eval, sub, c, n, m), rows) in groups {
        let len = rows.len() as f64;
        let avg = |f: &dyn Fn(&ExperimentRecord) -> Option<f64>| {
            let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
            if v.is_empty() {
                "-".to_string()
            } else {
                format!("{:.4e}", v.iter().sum::<f64>() / v.len() as f64)
            }
        };
        let converged = rows.iter().filter(|r| r.converged == Some(true)).count();
        println!(
            "{eval} {} {c} {n} {m} {} {:.2} {:.2} {} {} {converged}",
            sub.map(|s| s.to_string()).unwrap_or("-".into()),
            rows.len(),
            rows.iter().map(|r| r.calls).sum::<f64>() / len,
            rows.iter().map(|r| r.iters).sum::<f64>() / len,
            avg(&|r| r.angular_err),
            avg(&|r| r.norm_err),
        );
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
