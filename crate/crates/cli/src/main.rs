use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fairserve_core::experiment::{self, ExperimentConfig, PolicyRun};
use fairserve_core::metrics::{self, RunReport};
use fairserve_core::sched::PolicyConfig;
use fairserve_core::workload::{bucket_histogram, write_trace, Trace, GRAPH_SIZE_BUCKETS};

/// Fair scheduling simulator for multi-tenant LLM serving.
#[derive(Parser)]
#[command(name = "fairserve", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a trace from a config or preset.
    Gen(Common),
    /// Simulate one policy and write its report.
    Run(Common),
    /// Simulate several policies on the same trace.
    Compare(Common),
    /// Rebuild reports from saved event logs.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment: table1, abuse or case-study.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Policy name; comma-separated list for compare.
    #[arg(long)]
    policy: Option<String>,
    /// Use this trace instead of generating one.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Also write per-policy event logs.
    #[arg(long)]
    emit_events: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Trace the events were produced from.
    #[arg(long)]
    trace: PathBuf,
    /// Event log written by --emit-events. Repeat for several policies.
    #[arg(long, required = true)]
    events: Vec<PathBuf>,
    /// Config supplying report options such as the delay threshold.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => bail!("one of --config or --preset is required"),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(t) = &c.trace {
        cfg.trace_path = Some(t.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(c: &Common, cfg: &ExperimentConfig) -> PathBuf {
    c.out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn selected_policies(c: &Common, cfg: &ExperimentConfig) -> Result<Vec<PolicyConfig>> {
    match &c.policy {
        Some(list) => list
            .split(',')
            .map(|n| cfg.policy(n.trim()).map_err(Into::into))
            .collect(),
        None => Ok(cfg.policies.clone()),
    }
}

fn print_trace_summary(trace: &Trace) {
    println!(
        "users={} apps={} interactions={} calls={}",
        trace.users.len(),
        trace.apps.len(),
        trace.interactions.len(),
        trace.total_calls()
    );
    let hist = bucket_histogram(trace);
    let n = trace.interactions.len().max(1) as f64;
    for ((label, _, _), count) in GRAPH_SIZE_BUCKETS.iter().zip(hist) {
        println!("  graph size {label:>5}: {count:>8} ({:.2}%)", 100.0 * count as f64 / n);
    }
}

fn print_reports(reports: &[RunReport]) {
    println!(
        "{:<7} {:>9} {:>9} {:>10} {:>8} {:>8} {:>8} {:>8}",
        "policy", "served", "blocked", "aborted_mw", "wasted", "served%", "svc_int%", "delayed%"
    );
    for r in reports {
        let g = &r.global;
        println!(
            "{:<7} {:>9} {:>9} {:>10} {:>8} {:>8.2} {:>8.2} {:>8.2}",
            r.policy,
            g.requests_served,
            g.requests_blocked,
            g.interactions_aborted_midway,
            g.wasted_tokens,
            g.served_users_pct_requests,
            g.service_provided_pct_interactions,
            g.delayed_users_pct
        );
    }
}

fn simulate(c: &Common, single: bool) -> Result<()> {
    let cfg = load_config(c)?;
    let policies = selected_policies(c, &cfg)?;
    if single && policies.len() != 1 {
        bail!("run takes exactly one --policy (got {})", policies.len());
    }
    let trace = cfg.trace().context("loading trace")?;
    let runs: Vec<PolicyRun> = experiment::compare(&trace, &policies, cfg.engine, &cfg.report_options())?;
    let dir = out_dir(c, &cfg);
    let written = experiment::write_outputs(&dir, &runs, c.emit_events)?;
    let reports: Vec<RunReport> = runs.into_iter().map(|r| r.report).collect();
    print_reports(&reports);
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn gen(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let trace = cfg.generate()?;
    let dir = out_dir(c, &cfg);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("trace.jsonl");
    write_trace(&trace, &path)?;
    print_trace_summary(&trace);
    println!("wrote {}", path.display());
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let opts = match &a.config {
        Some(p) => ExperimentConfig::load(p)?.report_options(),
        None => Default::default(),
    };
    let trace = fairserve_core::workload::read_trace(&a.trace)?;
    let mut runs = Vec::new();
    for path in &a.events {
        let log = experiment::read_run_log(path)?;
        let report = metrics::compute_report(&log, &trace, &opts)
            .with_context(|| format!("computing report from {}", path.display()))?;
        runs.push(PolicyRun { log, report });
    }
    let written = experiment::write_outputs(Path::new(&a.out), &runs, false)?;
    let reports: Vec<RunReport> = runs.into_iter().map(|r| r.report).collect();
    print_reports(&reports);
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Gen(c) => gen(c),
        Cmd::Run(c) => simulate(c, true),
        Cmd::Compare(c) => simulate(c, false),
        Cmd::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
