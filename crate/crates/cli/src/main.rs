use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use cyclewalk_core::corrector::{
    covariance_csv, effective_covariance, geometric_schedule, harmonic_coordinates, lambda_continuation,
    sublinearity_csv, sublinearity_profile, Continuation, CorrectorSolution,
};
use cyclewalk_core::env::{check_env_invariants, EnvSpec, EnvironmentTorus};
use cyclewalk_core::io::{load_env, load_json, parse_moment, save_env, save_solution, to_json_pretty, write_atomic};
use cyclewalk_core::lab::{run_inequality_lab, LabConfig};
use cyclewalk_core::qfclt::{run_qfclt_experiment, ExperimentConfig};
use cyclewalk_core::walker::simulate_replica;
use cyclewalk_core::Error;

#[derive(Parser)]
#[command(name = "cyclewalk", about = "Random walks in cycle-decomposed random environments", version)]
struct Cli {
    /// Master seed; every random stream of the run is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print progress to standard error.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample an environment from a catalog config and write a snapshot.
    GenEnv {
        /// JSON with `catalog`, `side` and optionally `seed`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the torus side.
        #[arg(long)]
        side: Option<usize>,
    },
    /// Validate an environment snapshot (doubly stochastic, ellipticity, ...).
    CheckEnv {
        #[arg(long)]
        env: PathBuf,
        /// Write the validation report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Solve the regularized corrector equation and write a solution snapshot.
    SolveCorrector {
        #[command(flatten)]
        solve: SolveArgs,
        #[arg(long)]
        out: PathBuf,
        /// Write norms, bounds and residuals as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Estimate the effective covariance from the corrector.
    EstimateSigma {
        #[command(flatten)]
        solve: SolveArgs,
        /// Write the covariance as CSV `i,j,sigma2`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Radii for the sublinearity table, comma separated.
        #[arg(long, value_delimiter = ',')]
        n_grid: Vec<usize>,
        /// Moment exponent entering the sublinearity norm (number or `inf`).
        #[arg(long, value_parser = parse_moment, default_value = "inf")]
        q: f64,
        /// Write the sublinearity table as CSV `n,S_inf,S_2rho`.
        #[arg(long)]
        sublinearity: Option<PathBuf>,
    },
    /// Simulate independent walks from one site and summarize endpoints.
    Simulate {
        #[arg(long)]
        env: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1000)]
        replicas: usize,
        /// Start site, comma separated (default: origin).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        start: Vec<i64>,
        /// Write summary statistics as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the first replica's trajectory as CSV `t,x1,...,xd`.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Run the inequality checks configured in a JSON file.
    InequalityLab {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        side: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_parser = parse_moment)]
        p: Option<f64>,
        #[arg(long, value_parser = parse_moment)]
        q: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Run a full invariance-principle experiment and emit its reports.
    QfcltReport {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        side: Option<usize>,
        /// Decreasing schedule `start:end:count` (geometric).
        #[arg(long, value_parser = parse_schedule)]
        lambda_schedule: Option<Schedule>,
        #[arg(long, value_delimiter = ',')]
        n_grid: Vec<usize>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long, value_parser = parse_moment)]
        p: Option<f64>,
        #[arg(long, value_parser = parse_moment)]
        q: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Print the version.
    Version,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    env: PathBuf,
    /// Decreasing schedule `start:end:count` (geometric).
    #[arg(long, value_parser = parse_schedule)]
    lambda_schedule: Option<Schedule>,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 20_000)]
    max_iter: usize,
}

#[derive(Clone)]
struct Schedule(Vec<f64>);

fn parse_schedule(s: &str) -> Result<Schedule, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, k] = parts.as_slice() else {
        return Err(format!("expected start:end:count, got {s:?}"));
    };
    let a: f64 = a.parse().map_err(|_| format!("bad start {a:?}"))?;
    let b: f64 = b.parse().map_err(|_| format!("bad end {b:?}"))?;
    let k: usize = k.parse().map_err(|_| format!("bad count {k:?}"))?;
    geometric_schedule(a, b, k).map(Schedule).map_err(|e| e.to_string())
}

enum Outcome {
    Pass,
    CheckFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}

fn outcome(pass: bool) -> Outcome {
    if pass {
        Outcome::Pass
    } else {
        Outcome::CheckFailed
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    write_atomic(path, text.as_bytes())
}

fn prepare_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn solve(env: &EnvironmentTorus, args: &SolveArgs, verbose: bool) -> Result<Continuation, Error> {
    let schedule = args
        .lambda_schedule
        .as_ref()
        .map(|s| s.0.clone())
        .unwrap_or_else(cyclewalk_core::corrector::default_schedule);
    let start = Instant::now();
    let mut cont = lambda_continuation(env, &schedule, args.tol, args.max_iter)?;
    let last = cont.solutions.last_mut().expect("non-empty schedule");
    harmonic_coordinates(env, last);
    let cov = effective_covariance(env, last)?;
    last.sigma2 = Some(cov.matrix);
    if verbose {
        eprintln!("solved {} lambda values in {:.2?}", schedule.len(), start.elapsed());
    }
    Ok(cont)
}

fn print_matrix(name: &str, m: &[Vec<f64>]) {
    println!("{name} =");
    for row in m {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.15e}")).collect();
        println!("  [{}]", cells.join(", "));
    }
}

fn run(cli: &Cli) -> Result<Outcome, Error> {
    let verbose = cli.verbose > 0;
    match &cli.command {
        Command::Version => {
            println!("cyclewalk {}", env!("CARGO_PKG_VERSION"));
            Ok(Outcome::Pass)
        }
        Command::GenEnv { config, out, side } => {
            let mut spec: EnvSpec = load_json(config)?;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            if let Some(l) = side {
                spec.side = *l;
            }
            let env = spec.build()?;
            save_env(&env, out)?;
            println!(
                "wrote {} (d = {}, L = {}, {} shapes, seed {})",
                out.display(),
                env.dim(),
                env.side(),
                env.catalog().len(),
                env.seed()
            );
            Ok(Outcome::Pass)
        }
        Command::CheckEnv { env, report } => {
            let env = load_env(env)?;
            let r = check_env_invariants(&env);
            for c in &r.checks {
                let status = if c.pass { "pass" } else { "FAIL" };
                println!("{:<28} {status}  witness = {:e}", c.name, c.witness);
            }
            if let Some(path) = report {
                write_text(path, &to_json_pretty(&r)?)?;
            }
            Ok(outcome(r.passed()))
        }
        Command::SolveCorrector { solve: args, out, report } => {
            let env = load_env(&args.env)?;
            let cont = solve(&env, args, verbose)?;
            let sol = cont.last();
            save_solution(sol, out)?;
            print_solution(sol);
            for b in &cont.bounds {
                if !b.pass {
                    println!("norm bound FAIL at lambda = {:e}, coordinate {}", b.lambda, b.coordinate);
                }
            }
            if let Some(path) = report {
                let j = json!({
                    "lambda": sol.lambda,
                    "norms": sol.norms,
                    "sigma2": sol.sigma2,
                    "harmonic_identity_gap": sol.harmonic_identity_gap,
                    "stats": sol.stats,
                    "norm_bounds": cont.bounds,
                    "cauchy": cont.cauchy,
                });
                write_text(path, &to_json_pretty(&j)?)?;
            }
            Ok(outcome(cont.bounds_hold()))
        }
        Command::EstimateSigma {
            solve: args,
            out,
            n_grid,
            q,
            sublinearity,
        } => {
            let env = load_env(&args.env)?;
            let cont = solve(&env, args, verbose)?;
            let sol = cont.last();
            let sigma2 = sol.sigma2.clone().expect("filled by solve");
            print_matrix("sigma2", &sigma2);
            if let Some(path) = out {
                write_text(path, &covariance_csv(&sigma2))?;
            }
            if !n_grid.is_empty() || sublinearity.is_some() {
                let grid = if n_grid.is_empty() { vec![env.side() / 4, env.side() / 2] } else { n_grid.clone() };
                let q = if q.is_finite() { Some(*q) } else { None };
                let rows = sublinearity_profile(&env, sol, &grid, q)?;
                let table = sublinearity_csv(&rows);
                print!("{table}");
                if let Some(path) = sublinearity {
                    write_text(path, &table)?;
                }
            }
            Ok(outcome(cont.bounds_hold()))
        }
        Command::Simulate {
            env,
            horizon,
            replicas,
            start,
            out,
            trajectory,
        } => {
            let env = load_env(env)?;
            let d = env.dim();
            let x0 = if start.is_empty() { vec![0; d] } else { start.clone() };
            if x0.len() != d {
                return Err(Error::InvalidInput(format!("start has {} coordinates, need {d}", x0.len())));
            }
            if *replicas == 0 {
                return Err(Error::InvalidInput("need at least one replica".into()));
            }
            let seed = cli.seed.unwrap_or(env.seed());
            let runs = (0..*replicas)
                .into_par_iter()
                .map(|r| simulate_replica(&env, &x0, *horizon, seed, r as u64))
                .collect::<Result<Vec<_>, Error>>()?;
            let disp: Vec<Vec<f64>> = runs
                .iter()
                .map(|t| t.end().iter().zip(&x0).map(|(a, b)| (a - b) as f64).collect())
                .collect();
            let sq: Vec<f64> = disp.iter().map(|v| v.iter().map(|x| x * x).sum()).collect();
            let jumps: Vec<f64> = runs.iter().map(|t| t.num_jumps() as f64).collect();
            let (msd, msd_se) = cyclewalk_core::stats::mean_and_se(&sq);
            let (mj, mj_se) = cyclewalk_core::stats::mean_and_se(&jumps);
            let mean: Vec<f64> = (0..d)
                .map(|i| disp.iter().map(|v| v[i]).sum::<f64>() / *replicas as f64)
                .collect();
            let summary = json!({
                "d": d,
                "side": env.side(),
                "seed": seed,
                "replicas": replicas,
                "horizon": horizon,
                "start": x0,
                "mean_displacement": mean,
                "mean_square_displacement": {"mean": msd, "stderr": msd_se},
                "jumps": {"mean": mj, "stderr": mj_se},
            });
            println!("E|X_T - x0|^2 = {msd} +- {msd_se}  (T = {horizon}, {replicas} replicas)");
            if let Some(path) = out {
                write_text(path, &to_json_pretty(&summary)?)?;
            }
            if let Some(path) = trajectory {
                write_text(path, &runs[0].to_csv())?;
            }
            Ok(Outcome::Pass)
        }
        Command::InequalityLab {
            config,
            out_dir,
            side,
            n,
            p,
            q,
            trials,
        } => {
            let mut cfg: LabConfig = load_json(config)?;
            if let Some(s) = cli.seed {
                cfg.env.seed = s;
                cfg.seed = None;
            }
            if let Some(v) = side {
                cfg.env.side = *v;
            }
            if let Some(v) = n {
                cfg.n = *v;
            }
            if let Some(v) = p {
                cfg.p = *v;
            }
            if let Some(v) = q {
                cfg.q = *v;
            }
            if let Some(v) = trials {
                cfg.trials = *v;
            }
            let report = run_inequality_lab(&cfg)?;
            prepare_dir(out_dir)?;
            write_text(&out_dir.join("inequalities.csv"), &report.csv())?;
            write_text(&out_dir.join("inequalities.json"), &to_json_pretty(&report)?)?;
            for r in &report.summary {
                let status = if r.pass { "pass" } else { "FAIL" };
                println!(
                    "{:<20} {status}  worst ratio {:e} (constant {:e}, {} instances)",
                    r.check, r.ratio, r.constant_used, r.instances
                );
            }
            if let Some(m) = &report.maximal {
                let ok = m.instances.iter().filter(|i| i.pass).count();
                println!("maximal pipeline     {ok}/{} instances pass, C_Max = {:e}", m.instances.len(), m.c_max);
            }
            Ok(outcome(report.passed()))
        }
        Command::QfcltReport {
            config,
            out_dir,
            side,
            lambda_schedule,
            n_grid,
            replicas,
            p,
            q,
            tol,
        } => {
            let mut cfg: ExperimentConfig = load_json(config)?;
            if let Some(s) = cli.seed {
                cfg.env.seed = s;
                cfg.walk_seed = None;
            }
            if let Some(v) = side {
                cfg.env.side = *v;
            }
            if let Some(v) = lambda_schedule {
                cfg.schedule = v.0.clone();
            }
            if !n_grid.is_empty() {
                cfg.n_grid = n_grid.clone();
            }
            if let Some(v) = replicas {
                cfg.replicas = *v;
            }
            if let Some(v) = p {
                cfg.p = *v;
            }
            if let Some(v) = q {
                cfg.q = *v;
            }
            if let Some(v) = tol {
                cfg.tol = *v;
            }
            let start = Instant::now();
            let report = run_qfclt_experiment(&cfg)?;
            if verbose {
                eprintln!("experiment finished in {:.2?}", start.elapsed());
            }
            prepare_dir(out_dir)?;
            write_text(&out_dir.join("report.json"), &to_json_pretty(&report)?)?;
            write_text(&out_dir.join("covariance.csv"), &report.covariance_csv())?;
            write_text(&out_dir.join("ks.csv"), &report.ks_csv())?;
            write_text(&out_dir.join("vanishing.csv"), &report.vanishing_csv())?;
            write_text(&out_dir.join("sublinearity.csv"), &sublinearity_csv(&report.sublinearity))?;
            print_matrix("sigma2", &report.sigma2);
            for s in &report.scales {
                println!("n = {:<4} frobenius error {:.4} (+- {:.4})", s.n, s.frobenius_error, s.frobenius_stderr);
            }
            println!("H1 error nonincreasing: {}", report.h1_nonincreasing);
            println!("vanishing nonincreasing: {}", report.vanishing_nonincreasing);
            Ok(outcome(report.gates_pass()))
        }
    }
}

fn print_solution(sol: &CorrectorSolution) {
    println!("lambda = {:e}", sol.lambda);
    println!("alpha = {:e}", sol.norms.alpha);
    for i in 0..sol.d {
        println!(
            "coordinate {}: |D phi|_cov = {:e}, |phi|_L2(mu) = {:e}",
            i + 1,
            sol.norms.dphi_cov[i],
            sol.norms.phi_l2mu[i]
        );
    }
    if let Some(s) = &sol.sigma2 {
        print_matrix("sigma2", s);
    }
}
