use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lqmfg::scenario::{run_scenario, scenario_from_raw, RawConfig, Scenario, Stage};
use lqmfg::Result;

#[derive(Parser)]
#[command(name = "lqmfg", about = "Linear-quadratic mean-field game solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the stages listed in the scenario.
    Solve {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve and check assumptions, uniqueness regime and the monotonicity identity.
    Verify { config: PathBuf },
    /// Re-run the scenario once per value of one key.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<String>,
    },
}

fn load(path: &Path) -> Result<RawConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| lqmfg::MfgError::Config(format!("cannot read {}: {e}", path.display())))?;
    RawConfig::parse(&text)
}

fn execute(sc: &Scenario) -> Result<bool> {
    let outcome = run_scenario(sc)?;
    print!("{}", outcome.report);
    Ok(outcome.success)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solve { config, out, steps, seed } => {
            let mut raw = load(&config)?;
            if let Some(n) = steps {
                raw.set("steps", &n.to_string());
            }
            if let Some(s) = seed {
                raw.set("seed", &s.to_string());
            }
            let mut sc = scenario_from_raw(&raw)?;
            if let Some(dir) = out {
                sc.output_dir = dir;
            }
            execute(&sc)
        }
        Command::Verify { config } => {
            let mut sc = scenario_from_raw(&load(&config)?)?;
            sc.run = vec![Stage::Riccati, Stage::Verify];
            execute(&sc)
        }
        Command::Sweep { config, param, values } => {
            let base = load(&config)?;
            let root = scenario_from_raw(&base)?.output_dir;
            let mut all_ok = true;
            for v in &values {
                let mut raw = base.clone();
                raw.set(&param, v);
                let mut sc = scenario_from_raw(&raw)?;
                sc.output_dir = root.join(format!("{param}={v}"));
                println!("### {param} = {v}");
                all_ok &= execute(&sc)?;
            }
            Ok(all_ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
