//! `tracenorm` command-line front end.
//!
//! Exit codes: 0 on success, 1 on numerical failure, 2 on bad input. Errors
//! are reported on stderr as a single JSON object.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use tracenorm::par::{self, Execution};
use tracenorm::Error;

use commands::{Context, Format};
use config::{MethodArgs, RunConfig, SpecArgs};

#[derive(Parser)]
#[command(name = "tracenorm", version, about = "Trace-norm regularized matrix regression")]
struct Cli {
    /// Base seed for model and data generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV, JSON and SVG outputs.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Output formats; repeat or comma-separate. Defaults to all three.
    #[arg(long, global = true, value_enum, value_delimiter = ',')]
    format: Vec<Format>,
    /// Worker threads (0 uses every core, 1 runs sequentially).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Write per-iteration solver telemetry.
    #[arg(long, global = true)]
    trace: bool,
    /// Full-scale replicate counts and sample sizes.
    #[arg(long, global = true)]
    full: bool,
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve at one λ, on a dataset or a synthetic sample.
    Solve {
        #[arg(long)]
        lambda: f64,
        /// Dataset CSV; omit to sample from the synthetic model.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Manifest JSON (defaults to the CSV path with a .json extension).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        method: MethodArgs,
    },
    /// Regularization path over a λ grid.
    Path {
        /// Dataset CSV; omit to sample from the synthetic model.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Manifest JSON (defaults to the CSV path with a .json extension).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        method: MethodArgs,
    },
    /// ‖Λ‖₂ and the rank-consistency conditions of a synthetic model.
    ConsistencyCheck {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Draw a dataset and write it with its manifest and ground truth.
    Simulate {
        /// File stem inside the output directory.
        #[arg(long, default_value = "data")]
        name: String,
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Monte Carlo correct-rank frequency and error curves.
    Replicate {
        #[arg(long)]
        replicates: Option<usize>,
        /// Sample sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        method: MethodArgs,
    },
    /// Best correct-rank error against ‖Λ‖₂ over random designs.
    Scatter {
        #[arg(long)]
        designs: Option<usize>,
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        method: MethodArgs,
    },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_input_error() {
        2
    } else {
        1
    }
}

fn error_payload(e: &Error) -> serde_json::Value {
    let kind = match e {
        Error::InvalidInput(_) => "invalid_input",
        Error::InfeasibleDual(_) => "infeasible_dual",
        Error::NonConverged { .. } => "non_converged",
        Error::Aborted(_) => "aborted",
        Error::Data { .. } => "data",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    };
    let mut body = json!({ "kind": kind, "message": e.to_string() });
    match e {
        Error::Data { row, .. } => body["row"] = json!(row),
        Error::NonConverged { iterations, gap, .. } => {
            body["iterations"] = json!(iterations);
            body["gap"] = json!(gap);
        }
        _ => {}
    }
    json!({ "error": body })
}

fn run(cli: Cli) -> tracenorm::Result<serde_json::Value> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.full {
        cfg.full_scale();
    }
    if let Some(seed) = cli.seed {
        cfg.spec.seed = seed;
    }
    if cli.trace {
        cfg.solver.trace = true;
    }
    let ctx = Context {
        out_dir: cli.out_dir,
        formats: if cli.format.is_empty() { vec![Format::Csv, Format::Json, Format::Svg] } else { cli.format },
        execution: if cli.threads == 1 { Execution::Sequential } else { Execution::Parallel },
        trace: cli.trace,
    };
    let threads = cli.threads;
    par::with_threads(threads, move || match cli.command {
        Command::Solve { lambda, data, manifest, spec, method } => {
            spec.apply(&mut cfg.spec);
            method.apply(&mut cfg);
            commands::solve(&ctx, &cfg, data.as_deref(), manifest.as_deref(), lambda)
        }
        Command::Path { data, manifest, spec, method } => {
            spec.apply(&mut cfg.spec);
            method.apply(&mut cfg);
            commands::path(&ctx, &cfg, data.as_deref(), manifest.as_deref())
        }
        Command::ConsistencyCheck { spec } => {
            spec.apply(&mut cfg.spec);
            commands::consistency_check(&ctx, &cfg)
        }
        Command::Simulate { name, spec } => {
            spec.apply(&mut cfg.spec);
            commands::simulate(&ctx, &cfg, &name)
        }
        Command::Replicate { replicates, ns, spec, method } => {
            spec.apply(&mut cfg.spec);
            method.apply(&mut cfg);
            if let Some(r) = replicates {
                cfg.n_replicates = r;
            }
            if let Some(ns) = ns {
                cfg.n_values = ns;
            }
            commands::replicate(&ctx, &cfg)
        }
        Command::Scatter { designs, spec, method } => {
            spec.apply(&mut cfg.spec);
            method.apply(&mut cfg);
            if let Some(d) = designs {
                cfg.scatter.n_designs = d;
            }
            commands::scatter(&ctx, &cfg)
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            // a closed pipe on stdout is not an error of the run
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_payload(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
