use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use twics_core::scenario::{
    emit_reports, load_and_validate_config, preset, preset_catalog, run_scenario_with, ScenarioResult, PRESET_NAMES,
};
use twics_core::{Error, Execution};

/// Environment variable holding the worker-thread count.
const WORKERS_ENV: &str = "TWICS_WORKERS";

#[derive(Parser)]
#[command(name = "twics", about = "Simulate and analyse trials within cohorts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config and write reports.
    Run {
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's replication count.
        #[arg(long)]
        reps: Option<usize>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run replications on the calling thread only.
        #[arg(long)]
        serial: bool,
    },
    /// List presets, or print one preset's config.
    Presets { name: Option<String> },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Print the version.
    Version,
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    fn classify(e: Error) -> Self {
        match e {
            Error::Validation(errs) => Failure::Invalid(errs.join("\n")),
            e @ (Error::Json(_) | Error::Io(_) | Error::InvalidInput(_) | Error::Configuration(_)) => {
                Failure::Invalid(e.to_string())
            }
            e => Failure::Runtime(e.to_string()),
        }
    }
}

fn configure_workers() -> Result<(), Failure> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::Invalid(format!("{WORKERS_ENV} must be a positive integer, got '{value}'")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn print_summary(result: &ScenarioResult) {
    println!(
        "{:<16} {:>10} {:>10} {:>10} {:>9} {:>9} {:>6}",
        "label", "mean", "truth", "bias", "coverage", "reject", "n"
    );
    for s in &result.estimates {
        println!(
            "{:<16} {:>10.4} {:>10.4} {:>10.4} {:>9.3} {:>9.3} {:>6}",
            s.label.as_str(),
            s.mean_point,
            s.truth,
            s.bias,
            s.coverage,
            s.reject_rate,
            s.n_reps
        );
    }
    if let Some(m) = result.refusal.mean {
        println!("mean observed refusal: {m:.4}");
    }
    for note in &result.notes {
        println!("note: {note}");
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            config,
            seed,
            reps,
            out,
            serial,
        } => {
            configure_workers()?;
            let mut cfg = load_and_validate_config(&config).map_err(Failure::classify)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(r) = reps {
                cfg.replications = r;
            }
            if let Some(o) = out {
                cfg.outputs = o;
            }
            cfg.validate().map_err(Failure::classify)?;
            let execution = if serial { Execution::Serial } else { Execution::Parallel };
            let result = run_scenario_with(&cfg, execution).map_err(|e| Failure::Runtime(e.to_string()))?;
            let manifest = emit_reports(&result, &cfg.outputs).map_err(|e| Failure::Runtime(e.to_string()))?;
            print_summary(&result);
            for path in manifest {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Presets { name: None } => {
            println!("{:<14} {:>9} {:>8} {:>7}  summary", "name", "planned_n", "planned", "actual");
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
            for p in preset_catalog() {
                println!(
                    "{:<14} {:>9} {:>8} {:>7}  {}",
                    p.name,
                    p.planned_n,
                    fmt(p.planned_refusal),
                    fmt(p.actual_refusal),
                    p.summary
                );
            }
            Ok(())
        }
        Command::Presets { name: Some(name) } => {
            let p = preset(&name).ok_or_else(|| {
                Failure::Invalid(format!("unknown preset '{name}'; known: {}", PRESET_NAMES.join(", ")))
            })?;
            print!("{}", p.config.to_json_pretty());
            Ok(())
        }
        Command::Validate { config } => {
            load_and_validate_config(&config).map_err(Failure::classify)?;
            println!("{}: ok", config.display());
            Ok(())
        }
        Command::Version => {
            println!("twics {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
