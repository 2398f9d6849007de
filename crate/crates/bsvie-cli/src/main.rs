use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bsvie_cli::config::BackendSpec;
use bsvie_cli::pipeline::{self, Outcome};

#[derive(Parser)]
#[command(name = "bsvie", version, about = "Solvers and verifiers for backward stochastic Volterra integral equations")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a pipeline: a config file, a named suite, or a catalog
    /// problem refinement sweep.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Declarative experiment config (TOML).
    #[arg(long, conflicts_with_all = ["suite", "problem"])]
    config: Option<PathBuf>,
    /// Named suite: `acceptance` or `acceptance-quick`.
    #[arg(long, conflicts_with = "problem")]
    suite: Option<String>,
    /// Catalog problem for a refinement sweep.
    #[arg(long)]
    problem: Option<String>,
    /// Solver backend.
    #[arg(long, value_enum, default_value_t = BackendArg::Fd)]
    backend: BackendArg,
    /// Number of refinement levels for `--problem`.
    #[arg(long, default_value_t = 4)]
    refine: usize,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ensemble seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Fd,
    Picard,
    Kernel,
}

impl From<BackendArg> for BackendSpec {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Fd => BackendSpec::Fd,
            BackendArg::Picard => BackendSpec::Picard,
            BackendArg::Kernel => BackendSpec::Kernel,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Cmd::Run(args) = cli.cmd;
    if args.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads)
            .build_global()
        {
            eprintln!("thread pool: {e}");
        }
    }
    let out = args.out.clone();
    let result = if let Some(cfg) = &args.config {
        pipeline::run_config(cfg, out, args.seed)
    } else if let Some(suite) = &args.suite {
        pipeline::run_suite(suite, &out.unwrap_or_else(|| PathBuf::from("out-suite")))
    } else if let Some(problem) = &args.problem {
        pipeline::run_refine(
            problem,
            args.backend.into(),
            args.refine,
            args.seed.unwrap_or(42),
            &out.unwrap_or_else(|| PathBuf::from(format!("out-{problem}"))),
        )
    } else {
        eprintln!("nothing to run: pass --config, --suite, or --problem");
        return ExitCode::from(2);
    };
    match result {
        Ok(report) => {
            for m in &report.messages {
                println!("{m}");
            }
            match report.outcome {
                Outcome::Pass => println!("status: pass"),
                Outcome::VerificationFailure => println!("status: verification failure"),
                Outcome::ConfigError => println!("status: config error"),
                Outcome::NumericalFailure => println!("status: numerical failure"),
            }
            ExitCode::from(report.outcome.code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
