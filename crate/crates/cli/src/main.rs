use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime};

use clap::{Parser, Subcommand};
use hrpe_core::config::ScenarioConfig;
use hrpe_core::scenario::{resolve_output_dir, run_scenario, write_artifacts};
use hrpe_core::tensor::read_tensor;
use hrpe_core::Error;

/// Relative output directories are placed under this directory.
const OUTPUT_ROOT_VAR: &str = "HRPE_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "hrpe", version, about = "Beam-port channel estimation scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run { config: PathBuf },
    /// Check a config and print it with all defaults filled in.
    Validate { config: PathBuf },
    /// Print the header and value range of a tensor file.
    Inspect { tensor: PathBuf },
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

fn load(path: &Path) -> Result<ScenarioConfig, Failure> {
    ScenarioConfig::load(path).map_err(Failure::Config)
}

fn run(config: &Path) -> Result<(), Failure> {
    let cfg = load(config)?;
    let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from);
    let dir = resolve_output_dir(&cfg, root.as_deref());
    let started = SystemTime::now();
    let clock = Instant::now();
    let out = run_scenario(&cfg).map_err(Failure::Runtime)?;
    let files = write_artifacts(&out, &cfg, &dir, started, clock.elapsed()).map_err(Failure::Runtime)?;
    for line in out.results.summary() {
        println!("{line}");
    }
    println!("wrote {} files to {} in {:.1} s", files.len(), dir.display(), clock.elapsed().as_secs_f64());
    Ok(())
}

fn inspect(path: &Path) -> Result<(), Failure> {
    let t = read_tensor(path).map_err(Failure::Runtime)?;
    println!("element {:?}", t.element);
    for (name, n) in &t.axes {
        println!("axis {name} {n}");
    }
    let mag = t.data.iter().map(|v| v.norm());
    let (lo, hi) = mag.fold((f64::INFINITY, 0.0f64), |(lo, hi), m| (lo.min(m), hi.max(m)));
    if t.data.is_empty() {
        println!("empty");
    } else {
        println!("magnitude range [{lo:e}, {hi:e}]");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => run(config),
        Command::Validate { config } => load(config).map(|c| print!("{}", c.to_toml())),
        Command::Inspect { tensor } => inspect(tensor),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
