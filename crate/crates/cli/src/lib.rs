//! Command-line front end: argument parsing and the subcommand drivers.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use altcp::diagnostics::{assumption_report, contraction_params, default_alpha, init_theory_params, TheoryConstants};
use altcp::experiment::{emit_outputs, emit_table1, sweep, table1_suite, table1_table, ExperimentConfig, RunSummary, Scale};
use altcp::init::theory_trial_count;
use altcp::synth::random_ground_truth;
use altcp::tensor::io::read_factored;
use altcp::Error;
use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CAPACITY: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "altcp", version, about = "CP tensor decomposition by alternating rank-1 power updates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an instance, decompose it, and score the result.
    Decompose(ExperimentArgs),
    /// Repeat `decompose` over a grid of ranks and noise levels.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma-separated ranks.
        #[arg(long, value_delimiter = ',')]
        ranks: Vec<usize>,
        /// Comma-separated noise levels.
        #[arg(long, value_delimiter = ',')]
        noises: Vec<f64>,
    },
    /// Run the noiseless d × k grid and print the combined table.
    Table1 {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value = "ci")]
        scale: String,
    },
    /// Evaluate the checkable assumptions on a random or given instance.
    CheckAssumptions(CheckArgs),
    /// Evaluate the theory constants for a parameter point.
    Bounds(BoundsArgs),
}

/// Flags shared by the experiment subcommands. Values are kept as text and
/// applied through the config parser, so errors name the offending key.
#[derive(Debug, Default, Args)]
pub struct ExperimentArgs {
    /// Flat key=value file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// One dimension, or one per mode (comma separated).
    #[arg(long, alias = "dim")]
    pub dims: Option<String>,
    #[arg(long)]
    pub rank: Option<String>,
    #[arg(long)]
    pub order: Option<String>,
    #[arg(long)]
    pub symmetric: bool,
    /// Number of initializations L.
    #[arg(long)]
    pub trials: Option<String>,
    /// Iteration cap N per trial, or `none`.
    #[arg(long)]
    pub iters: Option<String>,
    /// Stopping constant t₁, or `none`.
    #[arg(long = "stop-t1")]
    pub stop_t1: Option<String>,
    #[arg(long = "center-iters")]
    pub center_iters: Option<String>,
    /// Cluster removal threshold ν.
    #[arg(long)]
    pub nu: Option<String>,
    #[arg(long)]
    pub eta0: Option<String>,
    #[arg(long)]
    pub eta1: Option<String>,
    /// Target spectral norm of the noise.
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long = "noise-kind")]
    pub noise_kind: Option<String>,
    #[arg(long = "noise-rank")]
    pub noise_rank: Option<String>,
    /// random or svd.
    #[arg(long)]
    pub init: Option<String>,
    /// jacobi or gauss-seidel.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long = "refine-sweeps")]
    pub refine_sweeps: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub repeats: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long = "dense-budget")]
    pub dense_budget: Option<String>,
    /// Factored tensor file to use as ground truth.
    #[arg(long)]
    pub truth: Option<String>,
    /// greedy or optimal.
    #[arg(long = "match")]
    pub match_strategy: Option<String>,
    #[arg(long = "accept-dist")]
    pub accept_dist: Option<String>,
    #[arg(long = "recovery-dist")]
    pub recovery_dist: Option<String>,
}

impl ExperimentArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut add = |k: &str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v.clone()));
            }
        };
        add("dims", &self.dims);
        add("rank", &self.rank);
        add("order", &self.order);
        add("trials", &self.trials);
        add("iters", &self.iters);
        add("stop-t1", &self.stop_t1);
        add("center-iters", &self.center_iters);
        add("nu", &self.nu);
        add("eta0", &self.eta0);
        add("eta1", &self.eta1);
        add("noise", &self.noise);
        add("noise-kind", &self.noise_kind);
        add("noise-rank", &self.noise_rank);
        add("init", &self.init);
        add("variant", &self.variant);
        add("refine-sweeps", &self.refine_sweeps);
        add("seed", &self.seed);
        add("repeats", &self.repeats);
        add("out", &self.out);
        add("dense-budget", &self.dense_budget);
        add("truth", &self.truth);
        add("match", &self.match_strategy);
        add("accept-dist", &self.accept_dist);
        add("recovery-dist", &self.recovery_dist);
        if self.symmetric {
            out.push(("symmetric".into(), "true".into()));
        }
        out
    }

    /// Defaults, then `--config`, then the flags.
    pub fn to_config(&self) -> Result<ExperimentConfig, CliError> {
        let text = match &self.config {
            Some(p) => Some(fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?),
            None => None,
        };
        ExperimentConfig::from_sources(text.as_deref(), &self.overrides()).map_err(CliError::from)
    }
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, alias = "dim", default_value = "100")]
    pub dims: String,
    #[arg(long, default_value_t = 10)]
    pub rank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Noise level ψ used by the noise and contraction checks.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Check this factored tensor file instead of a random instance.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[arg(long, alias = "dims")]
    pub dim: usize,
    #[arg(long)]
    pub rank: usize,
    #[arg(long = "w-max", default_value_t = 1.0)]
    pub w_max: f64,
    #[arg(long = "w-min", default_value_t = 1.0)]
    pub w_min: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Defaults to 4√(log₂ k).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub alpha0: f64,
    #[arg(long = "beta-prime", default_value_t = 0.05)]
    pub beta_prime: f64,
    /// Incoherence ρ; defaults to 4√(log₂ k / d).
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long = "mu-tilde", default_value_t = 0.5)]
    pub mu_tilde: f64,
    /// Number of initializations for g(L).
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Capacity(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Capacity(_) => EXIT_CAPACITY,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidValue { key, message } => CliError::Usage(format!("invalid value for --{key}: {message}")),
            Error::Parse { .. } => CliError::Usage(e.to_string()),
            Error::Capacity { .. } => CliError::Capacity(format!("{e} (try --noise-kind factored or raise --dense-budget)")),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "n/a".into()
    } else {
        format!("{x:.3e}")
    }
}

fn describe(s: &RunSummary) -> String {
    let mut out = String::new();
    let a = &s.aggregates;
    let _ = writeln!(
        out,
        "d={} k={} L={} noise={} repeats={}",
        s.config.max_dim(),
        s.config.rank,
        s.config.trials,
        s.config.noise,
        s.rows.len()
    );
    let _ = writeln!(
        out,
        "power phase: recovery_rate={:.4} avg_square_error={} avg_weight_error={} avg_iterations={:.2}",
        a.recovery_rate,
        fmt_num(a.avg_square_error),
        fmt_num(a.avg_weight_error),
        a.avg_iterations
    );
    for r in &s.repeats {
        if let Some(m) = &r.refined {
            let _ = writeln!(
                out,
                "{}: refined recovery_rate={:.4} factor_error={} weight_error={} sweeps={} shortfall={}",
                r.run_id,
                m.recovery_rate,
                fmt_num(m.factor_error),
                fmt_num(m.weight_error_norm),
                m.sweeps,
                r.shortfall
            );
        }
    }
    let _ = writeln!(out, "wall_clock_secs={:.2}", s.wall_clock_secs);
    out
}

fn emit(s: &RunSummary, sub: Option<String>) -> Result<(), CliError> {
    if let Some(dir) = &s.config.out {
        let dir = sub.map_or_else(|| dir.clone(), |name| dir.join(name));
        emit_outputs(s, &dir)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn run_decompose(args: &ExperimentArgs) -> Result<(), CliError> {
    let cfg = args.to_config()?;
    let s = altcp::experiment::run_experiment(&cfg)?;
    print!("{}", describe(&s));
    emit(&s, None)
}

fn run_sweep(args: &ExperimentArgs, ranks: &[usize], noises: &[f64]) -> Result<(), CliError> {
    let cfg = args.to_config()?;
    for &k in ranks {
        if k == 0 || k > cfg.trials {
            return Err(CliError::Usage(format!("invalid value for --ranks: {k} must lie in 1..={}", cfg.trials)));
        }
    }
    for s in sweep(&cfg, ranks, noises)? {
        print!("{}", describe(&s));
        emit(&s, Some(format!("k{}_noise{}", s.config.rank, s.config.noise)))?;
    }
    Ok(())
}

fn run_table1(args: &ExperimentArgs, scale: &str) -> Result<(), CliError> {
    let scale: Scale = scale.parse()?;
    let cfg = args.to_config()?;
    let summaries = table1_suite(scale, &cfg)?;
    println!("{:>6} {:>16} {:>16} {:>10} {:>10}", "k", "avg_weight_err", "avg_square_err", "avg_iters", "recovery");
    for r in table1_table(&summaries) {
        println!(
            "{:>6} {:>16} {:>16} {:>10.2} {:>10.4}",
            r.k,
            fmt_num(r.avg_weight_error),
            fmt_num(r.avg_square_error),
            r.avg_iterations,
            r.recovery_rate
        );
    }
    if let Some(dir) = &cfg.out {
        let p = emit_table1(&summaries, dir)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run_check(args: &CheckArgs) -> Result<(), CliError> {
    let t = match &args.truth {
        Some(p) => read_factored(p)?,
        None => {
            let mut cfg = ExperimentConfig::default();
            cfg.set("dims", &args.dims)?;
            random_ground_truth(&cfg.mode_dims(), args.rank, args.seed)?.tensor
        }
    };
    let report = assumption_report(&t, args.noise, &TheoryConstants::default(), args.seed)?;
    let text = if args.json { report.to_json() + "\n" } else { report.to_text() };
    match &args.out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run_bounds(args: &BoundsArgs) -> Result<(), CliError> {
    let (k, d) = (args.rank, args.dim);
    let alpha = args.alpha.unwrap_or_else(|| default_alpha(k));
    let rho = args.rho.unwrap_or_else(|| 4.0 * ((k as f64).log2().max(0.0) / d as f64).sqrt());
    let c = contraction_params(k, d, alpha, args.alpha0, args.beta_prime, args.w_max, args.w_min, args.noise)?;
    let i = init_theory_params(k, d, rho, args.w_max, args.w_min, alpha, args.alpha0, args.mu_tilde, 1.0)?;
    let trials = theory_trial_count(args.w_max / args.w_min, k, rho, i.mu, 1.0).ok();
    if args.json {
        let doc = serde_json::json!({
            "contraction": c,
            "f_at_eps_r": c.f(c.eps_r),
            "init": i,
            "g_at_trials": i.g(args.trials as f64),
            "theory_trial_count": trials.map(|t| t.to_string()),
        });
        println!("{}", serde_json::to_string_pretty(&doc).expect("json"));
    } else {
        println!("alpha={alpha:.6e}");
        println!("q={:.6e}", c.q);
        println!("q_below_half={}", !c.q_warning);
        println!("const={:.6e}", c.constant);
        println!("eps0_cap={:.6e}", c.eps0_cap);
        println!("eps_r={:.6e}", c.eps_r);
        println!("f_at_eps_r={:.6e}", c.f(c.eps_r));
        println!("refine_iterations={}", c.n_iters.map_or_else(|| "unbounded".into(), |n| n.to_string()));
        println!("mu_e={:.6e}", i.mu_e);
        println!("mu_r={:.6e}", i.mu_r);
        println!("mu={:.6e}", i.mu);
        println!("mu_limit={:.6e}", i.mu_limit);
        println!("init_feasible={}", i.feasible);
        println!("g_at_trials={:.6e}", i.g(args.trials as f64));
        println!("theory_trial_count={}", trials.map_or_else(|| "infeasible".into(), |t| t.to_string()));
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Decompose(a) => run_decompose(a),
        Command::Sweep { exp, ranks, noises } => run_sweep(exp, ranks, noises),
        Command::Table1 { exp, scale } => run_table1(exp, scale),
        Command::CheckAssumptions(a) => run_check(a),
        Command::Bounds(a) => run_bounds(a),
    }
}

/// Parses `argv`, runs the command, and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
