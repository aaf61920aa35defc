//! `mcloud`: run mobile-cloud scenarios and the regression checks.
//!
//! Exit codes: 0 success, 1 runtime failure or failed checks, 2 invalid
//! configuration or unknown suite, 3 infeasible quota or initial energies.

mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use mcloud_core::cost::CostError;
use mcloud_core::sim::export::{sig9, write_artifacts};
use mcloud_core::sim::metrics::summarize;
use mcloud_core::sim::{run_scenario, Mode, SimError};
use mcloud_core::verify::{run_suite, Suite};

use config::{ConfigErrors, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "mcloud", version, about = "Auction-based leader election and service discovery in D2D mobile clouds")]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// leader or pure.
    #[arg(long)]
    mode: Option<String>,
    /// Number of nodes.
    #[arg(long)]
    n: Option<usize>,
    /// SD responses per client per slot.
    #[arg(long)]
    eta: Option<u32>,
    /// Duration in slots.
    #[arg(long)]
    slots: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Run a check suite instead of a scenario: equilibrium, tables,
    /// overhead, transactions, simulation or all.
    #[arg(long, value_name = "SUITE")]
    verify: Option<String>,
}

const EXIT_FAILED: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(name) = &cli.verify {
        return verify(name);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if let Some(errors) = e.downcast_ref::<ConfigErrors>() {
                eprintln!("invalid configuration:\n{errors}");
                EXIT_INVALID
            } else if let Some(sim) = e.downcast_ref::<SimError>() {
                eprintln!("error: {sim}");
                match sim {
                    SimError::EtaBelowMinimum { .. }
                    | SimError::InitiallyInfeasible(_)
                    | SimError::Cost(CostError::NoFeasibleQuota { .. }) => EXIT_INFEASIBLE,
                    SimError::Invalid(_) | SimError::Cost(_) => EXIT_INVALID,
                    _ => EXIT_FAILED,
                }
            } else {
                eprintln!("error: {e:#}");
                EXIT_FAILED
            };
            ExitCode::from(code)
        }
    }
}

fn verify(name: &str) -> ExitCode {
    let suite: Suite = match name.parse() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let checks = run_suite(suite);
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED)
    }
}

/// Defaults, then the config file, then command-line overrides.
fn load(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    let mut errors = Vec::new();
    if let Some(m) = &cli.mode {
        cfg.set("mode", m, &mut errors);
    }
    if let Some(v) = cli.seed {
        cfg.scenario.seed = v;
    }
    if let Some(v) = cli.n {
        cfg.scenario.params.nodes = v;
    }
    if let Some(v) = cli.eta {
        cfg.scenario.params.quota = v;
    }
    if let Some(v) = cli.slots {
        cfg.scenario.slots = v;
    }
    if let Some(v) = &cli.out {
        cfg.out = v.clone();
    }
    errors.extend(cfg.problems());
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(errors).into())
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    let run = run_scenario(&cfg.scenario)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    write_artifacts(&run, &cfg.out).with_context(|| format!("writing artifacts to {}", cfg.out.display()))?;
    fs::write(cfg.out.join("config.txt"), cfg.to_text()).context("writing effective config")?;

    let s = summarize(&run.frames);
    println!(
        "{} run, seed {}, {} nodes, {} slots (eta = {}, eta_min = {})",
        cfg.scenario.mode,
        cfg.scenario.seed,
        cfg.scenario.params.nodes,
        cfg.scenario.slots,
        cfg.scenario.params.quota,
        run.eta_min
    );
    println!(
        "energy std {} -> {}, alive {}%, mean payoff {}",
        sig9(s.initial_energy_std),
        sig9(s.terminal_energy_std),
        sig9(100.0 * s.terminal_alive_fraction),
        sig9(s.mean_payoff)
    );
    if cfg.scenario.mode == Mode::LeaderBased && !run.infeasible_quota_slots.is_empty() {
        println!("warning: quota infeasible for the cloud size in {} slot(s)", run.infeasible_quota_slots.len());
    }
    println!("artifacts written to {}", cfg.out.display());
    Ok(())
}
