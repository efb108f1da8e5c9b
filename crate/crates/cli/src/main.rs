use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pilotsim_core::engine::write_trace;
use pilotsim_core::metrics::format_duration;
use pilotsim_core::{
    load_scenario, run_scenario, sweep_modes, RunOptions, RunReport, ScenarioConfig, ScenarioError,
    SimError,
};

const EXIT_VALIDATION: u8 = 2;
const EXIT_PARSE: u8 = 3;
const EXIT_INVARIANT: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(
    name = "pilotsim",
    version,
    about = "Two-zone disaster-recovery simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run one scenario and print its report.
    Run {
        #[command(flatten)]
        common: Common,
        /// Write the NDJSON event trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run the scenario under all four DR modes with their defaults.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write output to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(s) = cause.downcast_ref::<ScenarioError>() {
            return match s {
                ScenarioError::Io { .. } => EXIT_IO,
                ScenarioError::Parse(_) => EXIT_PARSE,
            };
        }
        if cause.downcast_ref::<SimError>().is_some() {
            return EXIT_VALIDATION;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    1
}

fn dispatch(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Validate { scenario } => validate(&scenario),
        Command::Run { common, trace } => run(&common, trace.as_deref()),
        Command::Sweep { common } => sweep(&common),
    }
}

fn load(path: &Path) -> Result<ScenarioConfig> {
    Ok(load_scenario(path)?)
}

fn validate(path: &Path) -> Result<u8> {
    let cfg = load(path)?;
    let diags = cfg.validate();
    if diags.is_empty() {
        println!("ok: {} ({})", cfg.name, cfg.mode());
        return Ok(0);
    }
    for d in &diags {
        println!("{d}");
    }
    Ok(EXIT_VALIDATION)
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body.as_bytes())?;
            Ok(())
        }
    }
}

fn render(report: &RunReport, format: Format) -> String {
    match format {
        Format::Json => report.to_json() + "\n",
        Format::Text => report.to_text(),
    }
}

fn run(common: &Common, trace: Option<&Path>) -> Result<u8> {
    let cfg = load(&common.scenario)?;
    let opts = RunOptions {
        seed: common.seed,
        trace: trace.is_some(),
    };
    let output = run_scenario(&cfg, &opts)?;
    if let (Some(path), Some(records)) = (trace, &output.trace) {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_trace(BufWriter::new(f), records)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    emit(
        common.out.as_deref(),
        &render(&output.report, common.format),
    )?;
    if !output.report.invariant_violations.is_empty() {
        for v in &output.report.invariant_violations {
            eprintln!("invariant violated: {v}");
        }
        return Ok(EXIT_INVARIANT);
    }
    Ok(0)
}

fn opt_ms(v: Option<u64>) -> String {
    v.map_or_else(|| "-".to_string(), |ms| format_duration(ms / 1000))
}

fn sweep(common: &Common) -> Result<u8> {
    let cfg = load(&common.scenario)?;
    let opts = RunOptions {
        seed: common.seed,
        trace: false,
    };
    let result = sweep_modes(&cfg, &opts)?;
    let body = match common.format {
        Format::Json => {
            let rows: Vec<_> = result
                .reports
                .iter()
                .map(|r| serde_json::from_str::<serde_json::Value>(&r.deterministic_json()))
                .collect::<Result<_, _>>()?;
            let v = serde_json::json!({
                "reports": rows,
                "ordering_violations": result.ordering_violations,
            });
            serde_json::to_string_pretty(&v)? + "\n"
        }
        Format::Text => {
            let mut s = format!(
                "{:<20} {:>14} {:>14} {:>8} {:>12} {:>8}\n",
                "mode", "rto", "rpo", "rpo_tx", "avail %", "verdict"
            );
            for r in &result.reports {
                s += &format!(
                    "{:<20} {:>14} {:>14} {:>8} {:>12.5} {:>8}\n",
                    r.mode.label(),
                    opt_ms(r.recovery.worst_rto_ms),
                    opt_ms(r.recovery.worst_rpo_time_ms),
                    r.recovery
                        .worst_rpo_transactions
                        .map_or_else(|| "-".to_string(), |t| t.to_string()),
                    r.availability.overall_percent,
                    r.recovery.verdict,
                );
            }
            if result.ordering_violations.is_empty() {
                s += "ordering check PASS\n";
            } else {
                s += "ordering check FAIL\n";
                for v in &result.ordering_violations {
                    s += &format!("  {v}\n");
                }
            }
            s
        }
    };
    emit(common.out.as_deref(), &body)?;
    if !result.ordering_violations.is_empty() {
        eprintln!("warning: DR modes are not ordered as expected");
    }
    let breaches: usize = result
        .reports
        .iter()
        .map(|r| r.invariant_violations.len())
        .sum();
    Ok(if breaches > 0 { EXIT_INVARIANT } else { 0 })
}
