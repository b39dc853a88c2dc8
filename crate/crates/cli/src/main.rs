use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use coordsim::monitor::{logged_violations, progress_report, replay, Violation};
use coordsim::render::write_snapshot;
use coordsim::scenario::bundled_names;
use coordsim::types::SimTime;
use coordsim::{run_scenario, RunOptions, Scenario, Trace};
use serde_json::json;

/// Deterministic simulator for robot coordination primitives.
#[derive(Parser)]
#[command(name = "coordsim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its trace, summary and snapshots.
    Run(RunArgs),
    /// Re-check a trace file offline and compare with the logged violations.
    Check {
        trace: PathBuf,
    },
    /// Render an SVG snapshot from a trace file.
    Render {
        trace: PathBuf,
        #[arg(long)]
        at: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// List the bundled scenarios.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: PathBuf,
    /// Master seed. Defaults to the scenario's `master_seed` (0 when unset).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Virtual time (ms) of an SVG snapshot; may be repeated.
    #[arg(long = "snapshot-at")]
    snapshot_at: Vec<u64>,
    #[arg(long = "snapshot-dir", default_value = ".")]
    snapshot_dir: PathBuf,
    /// Dotted-path override such as `net.loss_rate=0.2`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long = "halt-on-violation", value_name = "BOOL")]
    halt_on_violation: Option<bool>,
    #[arg(long = "max-time", value_name = "MS")]
    max_time: Option<u64>,
}

/// Failures that are the caller's fault map to exit code 2.
struct ConfigError(anyhow::Error);

fn load(args: &RunArgs) -> Result<Scenario> {
    let mut sc = Scenario::load_with(&args.scenario, &args.set)?;
    if let Some(seed) = args.seed {
        sc.master_seed = seed;
    }
    if let Some(h) = args.halt_on_violation {
        sc.monitor.halt_on_violation = h;
    }
    if let Some(t) = args.max_time {
        sc.max_time_ms = t;
    }
    sc.validate()?;
    Ok(sc)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn run(args: RunArgs) -> Result<ExitCode, ConfigError> {
    let sc = load(&args).map_err(ConfigError)?;
    let out = run_scenario(&sc, RunOptions::default()).map_err(|e| ConfigError(e.into()))?;
    let end = out.trace.end_time();
    if let Some(bad) = args.snapshot_at.iter().find(|t| SimTime(**t) > end) {
        return Err(ConfigError(anyhow::anyhow!("--snapshot-at {bad} is past the end of the run ({end})")));
    }
    let io = |e: anyhow::Error| ConfigError(e);
    if let Some(p) = &args.trace {
        let f = File::create(p).with_context(|| format!("creating {}", p.display())).map_err(io)?;
        out.trace.write_jsonl(BufWriter::new(f)).context("writing trace").map_err(io)?;
    }
    let report = progress_report(&out.trace);
    if let Some(p) = &args.summary {
        let summary = json!({
            "scenario": sc.name,
            "seed": sc.master_seed,
            "stop": out.stop.label(),
            "end_time": end,
            "all_done": out.all_vehicles_done(),
            "collision": out.collision,
            "final_locs": out.final_locs.iter().map(|(p, l)| (p.to_string(), l.label())).collect::<std::collections::BTreeMap<_, _>>(),
            "violations": out.violations,
            "progress": report,
        });
        write_json(p, &summary).map_err(io)?;
    }
    if !args.snapshot_at.is_empty() {
        std::fs::create_dir_all(&args.snapshot_dir)
            .with_context(|| format!("creating {}", args.snapshot_dir.display()))
            .map_err(io)?;
    }
    for t in &args.snapshot_at {
        let path = args.snapshot_dir.join(format!("snapshot_{t}.svg"));
        write_snapshot(&out.trace, SimTime(*t), &path).map_err(|e| io(e.into()))?;
    }

    let done = out.final_locs.values().filter(|l| l.label() == "done").count();
    println!(
        "{}: seed {} stopped ({}) at {}; {}/{} vehicles done, {} violations{}",
        sc.name,
        sc.master_seed,
        out.stop.label(),
        end,
        done,
        out.final_locs.len(),
        out.violations.len(),
        if out.collision { ", collision" } else { "" }
    );
    for v in &out.violations {
        println!("  {} at {}: {}", v.property.label(), v.time, v.detail);
    }
    for p in out.stuck() {
        println!("  {p} is stuck");
    }
    Ok(if out.success() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn read_trace(path: &Path) -> Result<Trace> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Trace::read_jsonl(BufReader::new(f))?)
}

fn check(path: &Path) -> Result<ExitCode> {
    let trace = read_trace(path)?;
    let offline: Vec<Violation> = replay(&trace);
    let logged = logged_violations(&trace.records);
    for v in &offline {
        println!("{} at {}: {}", v.property.label(), v.time, v.detail);
    }
    println!("{} violations found offline, {} logged online", offline.len(), logged.len());
    if offline != logged {
        bail!("offline replay disagrees with the logged violations");
    }
    Ok(if offline.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(args) => run(args),
        Cmd::Check { trace } => check(&trace).map_err(ConfigError),
        Cmd::Render { trace, at, out } => read_trace(&trace)
            .and_then(|t| Ok(write_snapshot(&t, SimTime(at), &out)?))
            .map(|_| ExitCode::SUCCESS)
            .map_err(ConfigError),
        Cmd::List => {
            for n in bundled_names() {
                println!("{n}");
            }
            Ok(ExitCode::SUCCESS)
        }
    };
    match res {
        Ok(code) => code,
        Err(ConfigError(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
