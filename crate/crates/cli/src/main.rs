//! `raschcat`: simulations, bound checks, the session service and terminal
//! sessions for Bayesian adaptive testing under the Rasch model.

mod interactive;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use raschcat_core::config::read_config;
use raschcat_core::simulate::{self, SimConfig};
use raschcat_core::theory::{self, BoundCheckConfig, ConcentrationConfig, ConsistencyConfig};
use raschcat_core::{CatError, EstimatorKind, ItemBank, SelectionRule, ThetaBounds};

const RULES_HELP: &str = "Selection rules: max-info (Fisher information at the point \
estimate), pw-info (posterior-weighted information), min-epv (minimum expected posterior \
variance), bayes-risk-sq and bayes-risk-abs (one-step Bayes risk under squared or absolute \
loss). Estimators: mean, median, mode, mle.";

#[derive(Parser)]
#[command(name = "raschcat", version, about = "Bayesian adaptive testing under the Rasch model", after_help = RULES_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo comparison of selection rules; writes mse_by_trial.csv,
    /// mse_by_theta.csv and runs.jsonl.
    #[command(after_help = RULES_HELP)]
    Simulate {
        /// JSON or TOML experiment description; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = all cores). Results do not depend on it.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Numerical checks of the rate bounds and the empirical experiments.
    #[command(subcommand)]
    Theory(TheoryCommand),
    /// Serve the session API over HTTP/JSON.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Default item bank for sessions that do not send one.
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Directory for write-through session logs.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Item-bank utilities.
    #[command(subcommand)]
    Bank(BankCommand),
    /// Terminal-driven adaptive test.
    #[command(after_help = RULES_HELP)]
    Session(SessionArgs),
}

#[derive(Subcommand)]
enum TheoryCommand {
    VerifyBounds(TheoryArgs),
    Concentration(TheoryArgs),
    Consistency {
        #[command(flatten)]
        common: TheoryArgs,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Args)]
struct TheoryArgs {
    /// JSON or TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for the JSON report (also printed to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BankCommand {
    /// Check schema, unique ids and difficulty bounds.
    Validate {
        path: PathBuf,
        #[arg(long, default_value_t = -6.0, allow_negative_numbers = true)]
        lower: f64,
        #[arg(long, default_value_t = 6.0, allow_negative_numbers = true)]
        upper: f64,
    },
}

#[derive(Args)]
pub struct SessionArgs {
    /// Read answers from the terminal.
    #[arg(long, required = true)]
    interactive: bool,
    #[arg(long, default_value = "bayes-risk-sq",
          value_parser = PossibleValuesParser::new(SelectionRule::NAMES)
              .map(|s| s.parse::<SelectionRule>().expect("listed names parse")))]
    rule: SelectionRule,
    #[arg(long, default_value = "mean",
          value_parser = PossibleValuesParser::new(["mean", "median", "mode", "mle"])
              .map(|s| s.parse::<EstimatorKind>().expect("listed names parse")))]
    estimator: EstimatorKind,
    /// `normal` (truncated to the ability bounds) or `uniform`.
    #[arg(long, default_value = "normal", value_parser = ["normal", "uniform"])]
    prior: String,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    prior_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    prior_sd: f64,
    #[arg(long, default_value_t = 30)]
    max_trials: usize,
    /// Item bank file; items are not reused. Defaults to difficulties
    /// -6, -5.95, ..., 6.
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Where the session log is written on EOF or completion.
    #[arg(long, default_value = "raschcat-session.json")]
    save: PathBuf,
    /// Continue a saved session (a log file, or a session id with --server).
    #[arg(long)]
    resume: Option<String>,
    /// Run the session on a raschcat service instead of in-process.
    #[arg(long)]
    server: Option<String>,
}

/// Outcome of a subcommand, mapped onto the exit code.
enum Failure {
    /// Verification or validation did not pass (exit 1).
    Check(String),
    /// Bad configuration or arguments (exit 2).
    Usage(String),
}

impl From<CatError> for Failure {
    fn from(e: CatError) -> Self {
        match e {
            CatError::Config(_) | CatError::Json(_) | CatError::Io(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Check(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn load_or_default<T: serde::de::DeserializeOwned + Default>(
    path: Option<&Path>,
) -> Result<T, Failure> {
    match path {
        Some(p) => read_config(p).map_err(|e| Failure::Usage(e.to_string())),
        None => Ok(T::default()),
    }
}

fn emit_report<T: Serialize>(report: &T, out: Option<&Path>, name: &str) -> Outcome {
    let text = serde_json::to_string_pretty(report).expect("reports serialize");
    println!("{text}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Usage(e.to_string()))?;
        std::fs::write(dir.join(name), text + "\n").map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(())
}

fn verdict(passed: bool, what: &str) -> Outcome {
    if passed {
        Ok(())
    } else {
        Err(Failure::Check(format!("{what} failed")))
    }
}

fn run_simulate(
    config: Option<&Path>,
    out: &Path,
    jobs: Option<usize>,
    seed: Option<u64>,
) -> Outcome {
    let mut cfg: SimConfig = load_or_default(config)?;
    if let Some(j) = jobs {
        cfg.parallelism = j;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let result = simulate::run(&cfg)?;
    simulate::write_outputs(&result, out)?;
    println!(
        "rule                 mse@1      mse@{:<4}  (seed {})",
        cfg.n_trials, cfg.seed
    );
    for rule in &result.rules {
        let curve = result.curve(rule).expect("rule present");
        println!(
            "{rule:<20} {:<10.5} {:<10.5}",
            curve[0],
            curve[curve.len() - 1]
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn run_theory(cmd: TheoryCommand) -> Outcome {
    match cmd {
        TheoryCommand::VerifyBounds(args) => {
            let cfg: BoundCheckConfig = load_or_default(args.config.as_deref())?;
            let report = theory::verify_bounds(&cfg)?;
            emit_report(&report, args.out.as_deref(), "verify_bounds.json")?;
            verdict(report.passed(), "bound verification")
        }
        TheoryCommand::Concentration(args) => {
            let cfg: ConcentrationConfig = load_or_default(args.config.as_deref())?;
            let report = theory::concentration_experiment(&cfg)?;
            emit_report(&report, args.out.as_deref(), "concentration.json")?;
            verdict(report.passed(), "concentration check")
        }
        TheoryCommand::Consistency { common, jobs } => {
            let mut cfg: ConsistencyConfig = load_or_default(common.config.as_deref())?;
            if let Some(j) = jobs {
                cfg.parallelism = j;
            }
            let report = theory::consistency_experiment(&cfg)?;
            emit_report(&report, common.out.as_deref(), "consistency.json")?;
            verdict(report.passed(), "consistency check")
        }
    }
}

fn run_bank_validate(path: &Path, lower: f64, upper: f64) -> Outcome {
    let bounds = ThetaBounds::new(lower, upper).map_err(|e| Failure::Usage(e.to_string()))?;
    let bank = ItemBank::load(path, bounds, false).map_err(|e| Failure::Check(e.to_string()))?;
    let issues = bank.issues();
    if issues.is_empty() {
        println!("ok: {} items in {}", bank.items.len(), path.display());
        return Ok(());
    }
    for issue in &issues {
        println!("{issue}");
    }
    Err(Failure::Check(format!(
        "{} problem(s) in {}",
        issues.len(),
        path.display()
    )))
}

fn run_serve(host: &str, port: u16, bank: Option<&Path>, data_dir: Option<PathBuf>) -> Outcome {
    let bank = match bank {
        Some(p) => ItemBank::load(p, ThetaBounds::default(), true)?,
        None => interactive::default_bank(),
    };
    bank.validate()?;
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .try_init();
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Usage(e.to_string()))?;
    runtime.block_on(async move {
        let state = raschcat_service::AppState::new(bank, data_dir)
            .await
            .map_err(|e| Failure::Usage(e.to_string()))?;
        let restored = state.session_count().await;
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| Failure::Usage(format!("binding {host}:{port}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Failure::Usage(e.to_string()))?;
        eprintln!("listening on http://{addr} ({restored} sessions restored)");
        raschcat_service::serve(listener, Arc::new(state))
            .await
            .map_err(|e| Failure::Usage(e.to_string()))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate {
            config,
            out,
            jobs,
            seed,
        } => run_simulate(config.as_deref(), &out, jobs, seed),
        Command::Theory(cmd) => run_theory(cmd),
        Command::Serve {
            port,
            host,
            bank,
            data_dir,
        } => run_serve(&host, port, bank.as_deref(), data_dir),
        Command::Bank(BankCommand::Validate { path, lower, upper }) => {
            run_bank_validate(&path, lower, upper)
        }
        Command::Session(args) => interactive::run(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
