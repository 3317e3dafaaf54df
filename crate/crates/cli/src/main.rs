use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shardplan_cli::{
    cmd_compare, cmd_import_profile, cmd_plan, cmd_simulate, emit, load_config, CliError, Outcome, Overrides,
};
use shardplan_core::sim::trace_json;
use shardplan_core::{OverlapTier, PresetName};

/// Plans and simulates ZeRO-style sharding of model states.
#[derive(Debug, Parser)]
#[command(name = "shardplan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Bandwidth profile (CSV or canonical JSON), overriding the config.
    #[arg(long, global = true)]
    profile: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write a Trace Event Format timeline (simulate only).
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
    /// none, ag_rs, ag_rs_ar or ag_rs_ar_bc.
    #[arg(long, global = true)]
    overlap: Option<OverlapTier>,
    /// Simulate a named preset such as zero3 or amsp-7b.
    #[arg(long, global = true)]
    preset: Option<PresetName>,
    /// Include every ranked candidate in the plan report.
    #[arg(long, global = true)]
    all_candidates: bool,
    /// Print a human-readable summary to stdout.
    #[arg(long, global = true)]
    pretty: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Find the communication-minimal plan that fits in memory.
    Plan,
    /// Simulate one training step of a plan.
    Simulate,
    /// Compare the presets and the solver's plan.
    Compare,
    /// Convert profiler CSV into the canonical profile JSON.
    ImportProfile {
        /// CSV with header op,size_bytes,gpus_per_node,nodes,bus_bw_bytes_per_s.
        csv: PathBuf,
    },
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    if let Command::ImportProfile { csv } = &cli.command {
        emit(&cmd_import_profile(csv)?, cli.out.as_deref())?;
        return Ok(0);
    }
    let config = cli.config.as_deref().ok_or_else(|| CliError::Invalid("--config <path> is required".into()))?;
    let overrides = Overrides {
        profile: cli.profile.clone(),
        overlap: cli.overlap,
        preset: cli.preset,
        all_candidates: cli.all_candidates,
    };
    let (resolved, profile) = load_config(config, &overrides)?;
    let Outcome { report, exit_code, timeline } = match cli.command {
        Command::Plan => cmd_plan(&resolved, &profile)?,
        Command::Simulate => cmd_simulate(&resolved, &profile)?,
        Command::Compare => cmd_compare(&resolved, &profile)?,
        Command::ImportProfile { .. } => unreachable!("handled above"),
    };
    if let (Some(path), Some(timeline)) = (&cli.trace, &timeline) {
        emit(&trace_json(timeline), Some(path))?;
    }
    if cli.pretty {
        print!("{}", report.to_pretty());
        if cli.out.is_some() {
            emit(&report.to_json(), cli.out.as_deref())?;
        }
    } else {
        emit(&report.to_json(), cli.out.as_deref())?;
    }
    if let Some(i) = &report.infeasible {
        eprintln!(
            "infeasible: nothing fits in {} bytes; smallest footprint {} needs {} bytes",
            i.capacity, i.min_memory_plan, i.min_d_total
        );
    }
    Ok(exit_code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
