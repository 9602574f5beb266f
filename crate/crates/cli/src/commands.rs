//! The three subcommands: `run`, `reliability` and `sweep`.
//!
//! Exit codes: 0 on success, 1 when a simulation did not complete, 2 on
//! configuration errors (surfaced as `Err` and mapped by `main`).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ftpads_core::engine::{derived_seed, RunReport, Simulation};
use ftpads_core::p2p::P2pModel;
use ftpads_core::reliability::{
    monte_carlo_reliability, r_byzantine, r_crash, r_crash_unconstrained, ModelKind,
    ReliabilityQuery,
};

use crate::config::{LoadedRun, ModelKindArg, RunConfigFile};
use crate::output::{deliveries_enabled_by_env, JsonlSink, RowParams, RUN_CSV_HEADER};

#[derive(Debug, Parser)]
#[command(
    name = "ftpads",
    version,
    about = "Fault-tolerant replicated simulation runner and reliability calculator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute one simulation run described by a config file.
    Run(RunArgs),
    /// Emit reliability curves as CSV (closed forms, optional Monte Carlo).
    Reliability(ReliabilityArgs),
    /// Re-run the base config once per value of a swept axis.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Path to the TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// CSV output path (stdout when omitted). An event log is written
    /// next to it with the extension `events.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker thread override.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Crash,
    Byzantine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReliabilityAxis {
    /// Sweep the number of failed LPs.
    X,
    /// Sweep the number of entities.
    N,
}

#[derive(Debug, Args)]
pub struct ReliabilityArgs {
    /// Number of LPs (L).
    #[arg(long)]
    pub lps: u32,
    /// Number of entities (N); the fixed value when sweeping X.
    #[arg(long)]
    pub entities: u64,
    /// Replication degree (M).
    #[arg(long)]
    pub replicas: u32,
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Swept quantity.
    #[arg(long, value_enum)]
    pub sweep: ReliabilityAxis,
    #[arg(long)]
    pub from: u64,
    #[arg(long)]
    pub to: u64,
    #[arg(long, default_value_t = 1)]
    pub step: u64,
    /// Fixed number of failed LPs, required when sweeping N.
    #[arg(long)]
    pub failed: Option<u32>,
    /// Add Monte Carlo estimate columns with this many trials per row.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Seed for the Monte Carlo streams.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    N,
    L,
    Faults,
    M,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Path to the base TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Which quantity the values apply to.
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<u64>,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed override for the base config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker thread override.
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Dispatch a parsed command line; the return value is the process exit
/// code for non-config outcomes.
pub fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Reliability(args) => cmd_reliability(&args),
        Command::Sweep(args) => cmd_sweep(&args),
    }
}

/// Run a resolved configuration, optionally streaming events as JSON
/// lines. Returns the report and the wall-clock seconds spent inside the
/// engine.
pub fn run_simulation(loaded: &LoadedRun, events: Option<&mut dyn Write>) -> Result<(RunReport, f64)> {
    let model = P2pModel::new(loaded.sim.entities, loaded.p2p, loaded.sim.master_seed)?;
    let sim = Simulation::new(loaded.sim.clone(), model, loaded.schedule.clone())?;
    let start = Instant::now();
    let report = match events {
        Some(writer) => {
            let mut sink = JsonlSink::new(writer, deliveries_enabled_by_env());
            let report = sim.run(&mut sink);
            sink.finish().context("writing event log")?;
            report
        }
        None => sim.run_quiet(),
    };
    Ok((report, start.elapsed().as_secs_f64()))
}

fn cmd_run(args: &RunArgs) -> Result<u8> {
    let file = RunConfigFile::load(&args.config)?;
    let loaded = file.resolve(args.seed, args.workers)?;

    let mut events_writer = match &args.out {
        Some(out) => {
            let path = events_path(out);
            let file = File::create(&path)
                .with_context(|| format!("cannot create event log {}", path.display()))?;
            Some(BufWriter::new(file))
        }
        None => None,
    };
    let (report, wall) = run_simulation(
        &loaded,
        events_writer.as_mut().map(|w| w as &mut dyn Write),
    )?;

    let params = RowParams::from_model(
        loaded.sim.lps,
        loaded.sim.entities,
        &loaded.sim.model,
        loaded.sim.master_seed,
        loaded.fault_count(),
    );
    let row = params.csv_row(&report, wall);
    write_csv(args.out.as_deref(), RUN_CSV_HEADER, &[row])?;
    log::info!(
        "run {} finished: completed={} migrations={}",
        params.run_id(),
        report.completed,
        report.migrations
    );
    Ok(if report.completed { 0 } else { 1 })
}

/// Header and rows of a reliability table; shared by the subcommand and
/// the acceptance suite.
pub fn reliability_table(args: &ReliabilityArgs) -> Result<(String, Vec<String>)> {
    if args.step == 0 {
        bail!("--step must be at least 1");
    }
    if args.from > args.to {
        bail!("--from must not exceed --to");
    }
    if args.sweep == ReliabilityAxis::N && args.failed.is_none() {
        bail!("sweeping N requires --failed to fix the number of failed LPs");
    }

    let crash_model = args.model == ModelArg::Crash;
    let mut header = String::from(match args.sweep {
        ReliabilityAxis::X => "x",
        ReliabilityAxis::N => "n",
    });
    header.push_str(",analytic");
    if crash_model {
        header.push_str(",analytic_unconstrained");
    }
    if args.trials.is_some() {
        header.push_str(",mc_estimate,mc_stderr");
    }

    let mut rows = Vec::new();
    let mut value = args.from;
    while value <= args.to {
        let query = match args.sweep {
            ReliabilityAxis::X => {
                let x: u32 = value.try_into().context("swept X exceeds u32")?;
                ReliabilityQuery::new(args.lps, args.entities, args.replicas, x)
            }
            ReliabilityAxis::N => ReliabilityQuery::new(
                args.lps,
                value,
                args.replicas,
                args.failed.expect("checked above"),
            ),
        };
        let analytic = if crash_model { r_crash(&query)? } else { r_byzantine(&query)? };
        let mut row = format!("{value},{analytic:.17e}");
        if crash_model {
            let unconstrained = r_crash_unconstrained(&query)?;
            row.push_str(&format!(",{unconstrained:.17e}"));
        }
        if let Some(trials) = args.trials {
            let kind = if crash_model { ModelKind::Crash } else { ModelKind::Byzantine };
            let mc = monte_carlo_reliability(
                &query,
                true,
                kind,
                trials,
                derived_seed(args.seed, MC_ROW_DOMAIN ^ value),
            )?;
            row.push_str(&format!(",{:.17e},{:.17e}", mc.estimate, mc.stderr));
        }
        rows.push(row);
        match value.checked_add(args.step) {
            Some(next) => value = next,
            None => break,
        }
    }
    Ok((header, rows))
}

fn cmd_reliability(args: &ReliabilityArgs) -> Result<u8> {
    let (header, rows) = reliability_table(args)?;
    write_csv(args.out.as_deref(), &header, &rows)?;
    Ok(0)
}

/// One sweep row: value, resolved run (or the reason it could not be
/// built) and the CSV line.
pub struct SweepRow {
    pub value: u64,
    pub report: Option<RunReport>,
    pub csv: String,
}

/// Execute the sweep and return all rows; shared with the acceptance
/// suite. Per-row failures (invalid value for the base config) are
/// recorded as `completed=false` rows and the sweep continues.
pub fn sweep_rows(
    file: &RunConfigFile,
    axis: SweepAxis,
    values: &[u64],
    seed_override: Option<u64>,
    workers_override: Option<usize>,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let base_seed = seed_override.unwrap_or(file.sim.master_seed);
    let mut rows = Vec::new();

    for (index, &value) in values.iter().enumerate() {
        let row_seed = derived_seed(base_seed, SWEEP_SEED_DOMAIN + index as u64);
        match build_row_config(file, axis, value) {
            Ok(modified) => {
                let loaded = modified.resolve(Some(row_seed), workers_override).and_then(|mut l| {
                    if axis == SweepAxis::Faults {
                        let count: u32 = value.try_into().context("fault count exceeds u32")?;
                        l.schedule = modified.generated_schedule(count, row_seed)?;
                    }
                    Ok(l)
                });
                match loaded.and_then(|l| Ok((run_simulation(&l, None)?, l))) {
                    Ok(((report, wall), l)) => {
                        let params = RowParams::from_model(
                            l.sim.lps,
                            l.sim.entities,
                            &l.sim.model,
                            l.sim.master_seed,
                            l.fault_count(),
                        );
                        rows.push(SweepRow {
                            value,
                            csv: params.csv_row(&report, wall),
                            report: Some(report),
                        });
                    }
                    Err(err) => {
                        log::warn!("sweep value {value} failed: {err:#}");
                        rows.push(failed_row(&modified, axis, value, row_seed));
                    }
                }
            }
            Err(err) => {
                log::warn!("sweep value {value} is invalid: {err:#}");
                rows.push(failed_row(file, axis, value, row_seed));
            }
        }
    }
    Ok(rows)
}

fn build_row_config(file: &RunConfigFile, axis: SweepAxis, value: u64) -> Result<RunConfigFile> {
    let mut modified = file.clone();
    match axis {
        SweepAxis::N => {
            modified.sim.entities =
                value.try_into().context("entity count exceeds u32")?;
            if modified.sim.entities == 0 {
                bail!("entity count must be at least 1");
            }
        }
        SweepAxis::L => {
            modified.sim.lps = value.try_into().context("LP count exceeds u32")?;
            if modified.sim.lps == 0 {
                bail!("LP count must be at least 1");
            }
        }
        SweepAxis::M => {
            let m: u32 = value.try_into().context("replication degree exceeds u32")?;
            if m == 0 {
                bail!("replication degree must be at least 1");
            }
            modified.failure_model.tolerated_faults = match file.failure_model.kind {
                ModelKindArg::Crash => m - 1,
                ModelKindArg::Byzantine => {
                    if m.is_multiple_of(2) {
                        bail!("Byzantine replication degree must be odd (M = 2f + 1), got {m}");
                    }
                    (m - 1) / 2
                }
            };
        }
        SweepAxis::Faults => {
            let count: u32 = value.try_into().context("fault count exceeds u32")?;
            if count > modified.sim.lps {
                bail!("cannot fail {count} of {} LPs", modified.sim.lps);
            }
        }
    }
    Ok(modified)
}

fn failed_row(file: &RunConfigFile, axis: SweepAxis, value: u64, row_seed: u64) -> SweepRow {
    // Best-effort identifying fields for the placeholder row.
    let (mut l, mut n) = (file.sim.lps, file.sim.entities);
    let mut m = file.failure_model().replication_degree();
    let mut faults = file.fault.len();
    match axis {
        SweepAxis::N => n = value.try_into().unwrap_or(u32::MAX),
        SweepAxis::L => l = value.try_into().unwrap_or(u32::MAX),
        SweepAxis::M => m = value.try_into().unwrap_or(u32::MAX),
        SweepAxis::Faults => faults = value as usize,
    }
    let params = RowParams {
        l,
        n,
        m,
        model: match file.failure_model.kind {
            ModelKindArg::Crash => "crash",
            ModelKindArg::Byzantine => "byzantine",
        },
        seed: row_seed,
        faults,
    };
    SweepRow { value, report: None, csv: params.failed_csv_row() }
}

fn cmd_sweep(args: &SweepArgs) -> Result<u8> {
    let file = RunConfigFile::load(&args.config)?;
    let rows = sweep_rows(&file, args.axis, &args.values, args.seed, args.workers)?;
    let csv: Vec<String> = rows.iter().map(|r| r.csv.clone()).collect();
    write_csv(args.out.as_deref(), RUN_CSV_HEADER, &csv)?;
    let all_completed = rows.iter().all(|r| r.report.as_ref().is_some_and(|rep| rep.completed));
    Ok(if all_completed { 0 } else { 1 })
}

fn events_path(out: &Path) -> PathBuf {
    out.with_extension("events.jsonl")
}

fn write_csv(out: Option<&Path>, header: &str, rows: &[String]) -> Result<()> {
    match out {
        Some(path) => {
            let file = File::create(path)
                .with_context(|| format!("cannot create output file {}", path.display()))?;
            let mut w = BufWriter::new(file);
            writeln!(w, "{header}")?;
            for row in rows {
                writeln!(w, "{row}")?;
            }
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            writeln!(w, "{header}")?;
            for row in rows {
                writeln!(w, "{row}")?;
            }
        }
    }
    Ok(())
}

const SWEEP_SEED_DOMAIN: u64 = 0x53_57_45_45_50; // per-value seed derivation
const MC_ROW_DOMAIN: u64 = 0x6D63_726Fu64;
