//! `printcan`: run, verify, and list printer-bus scenarios.

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use printcan::runner::{run_scenario, RunOutcome};
use printcan::scenario::Scenario;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "printcan",
    about = "Deterministic CAN printer simulator and attack scenario driver",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file, check its assertions, and optionally write the
    /// bus trace and impact report.
    Run {
        /// Path to a .scn scenario file.
        scenario: PathBuf,
        /// Write the delivered-frame trace (candump format) here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the JSON impact report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Override the scenario's attacker seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Print only the final summary line.
        #[arg(long)]
        quiet: bool,
    },
    /// Re-run a scenario and check that it reproduces a previously written
    /// trace byte for byte.
    Verify {
        /// Path to the .scn scenario file.
        scenario: PathBuf,
        /// Path to the trace the run must reproduce.
        trace: PathBuf,
        /// Override the scenario's attacker seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List scenario files in a directory with a one-line summary each.
    List {
        /// Directory to scan; defaults to $PRINTCAN_SCENARIOS, then ./scenarios.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(passed) => {
            if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Cmd::Run { scenario, trace, report, seed, quiet } => {
            let outcome = load_and_run(&scenario, seed)?;
            if let Some(path) = trace {
                fs::write(&path, outcome.trace_text())
                    .with_context(|| format!("writing trace to {}", path.display()))?;
                if !quiet {
                    println!("trace written to {}", path.display());
                }
            }
            if let Some(path) = report {
                fs::write(&path, outcome.report_json())
                    .with_context(|| format!("writing report to {}", path.display()))?;
                if !quiet {
                    println!("report written to {}", path.display());
                }
            }
            print_outcome(&outcome, quiet);
            Ok(outcome.passed)
        }
        Cmd::Verify { scenario, trace, seed } => {
            let recorded = fs::read_to_string(&trace)
                .with_context(|| format!("reading trace {}", trace.display()))?;
            let outcome = load_and_run(&scenario, seed)?;
            let fresh = outcome.trace_text();
            if fresh == recorded {
                println!(
                    "trace verified: {} frames reproduced exactly",
                    outcome.records.len()
                );
                Ok(true)
            } else {
                report_trace_diff(&recorded, &fresh);
                Ok(false)
            }
        }
        Cmd::List { dir } => {
            let dir = dir
                .or_else(|| std::env::var_os("PRINTCAN_SCENARIOS").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("scenarios"));
            list_dir(&dir)?;
            Ok(true)
        }
    }
}

fn load_and_run(path: &Path, seed: Option<u64>) -> anyhow::Result<RunOutcome> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading scenario {}", path.display()))?;
    let mut scenario = Scenario::parse(&text)
        .with_context(|| format!("parsing scenario {}", path.display()))?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    Ok(run_scenario(&scenario)?)
}

fn print_outcome(outcome: &RunOutcome, quiet: bool) {
    if !quiet {
        println!(
            "scenario {} (seed {}, {}s at {} bit/s)",
            outcome.scenario.name,
            outcome.scenario.seed,
            outcome.scenario.duration_s,
            outcome.scenario.bitrate
        );
        for a in &outcome.assertions {
            let verdict = if a.passed { "PASS" } else { "FAIL" };
            println!("{verdict} line {}: {} ({})", a.line, a.text, a.detail);
        }
    }
    let passed = outcome.assertions.iter().filter(|a| a.passed).count();
    println!(
        "{}/{} assertions passed, {} frames delivered",
        passed,
        outcome.assertions.len(),
        outcome.report.frames_delivered
    );
}

fn report_trace_diff(recorded: &str, fresh: &str) {
    let mut recorded_lines = recorded.lines();
    let mut fresh_lines = fresh.lines();
    let mut line_no = 0usize;
    loop {
        line_no += 1;
        match (recorded_lines.next(), fresh_lines.next()) {
            (Some(a), Some(b)) if a == b => continue,
            (Some(a), Some(b)) => {
                println!("trace mismatch at line {line_no}:");
                println!("  recorded: {a}");
                println!("  fresh:    {b}");
                return;
            }
            (Some(a), None) => {
                println!("trace mismatch: recorded has extra line {line_no}: {a}");
                return;
            }
            (None, Some(b)) => {
                println!("trace mismatch: fresh run has extra line {line_no}: {b}");
                return;
            }
            (None, None) => {
                // Same lines but different bytes: line endings or a missing
                // trailing newline.
                println!("trace mismatch: files differ only in whitespace or line endings");
                return;
            }
        }
    }
}

fn list_dir(dir: &Path) -> anyhow::Result<()> {
    let entries = fs::read_dir(dir)
        .with_context(|| format!("listing scenario directory {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "scn"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .scn files in {}", dir.display());
    }
    for path in paths {
        let file = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        match fs::read_to_string(&path).map_err(anyhow::Error::from).and_then(|text| {
            Scenario::parse(&text).map_err(anyhow::Error::from)
        }) {
            Ok(scn) => println!(
                "{file}: {} ({}s, {} setup, {} attack, {} assert)",
                scn.name,
                scn.duration_s,
                scn.setup.len(),
                scn.attacks.len(),
                scn.asserts.len()
            ),
            Err(e) => println!("{file}: unreadable ({e})"),
        }
    }
    Ok(())
}
