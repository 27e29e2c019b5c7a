//! Benchmark CLI for the task-graph runtime.
//!
//! Exit codes: 0 all checks passed, 1 an oracle/checksum/bound check failed,
//! 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use htdg::bench::{
    corun_throughput, creation_overhead, report_to_text, run_bench, BenchConfig, Generator,
};

#[derive(Parser)]
#[command(name = "htdg-bench", version, about = "Task-graph runtime benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a workload, run it, and check it against the sequential oracle.
    Run(RunArgs),
    /// Run N copies of a workload concurrently and report weighted speedup.
    Corun(CorunArgs),
    /// Measure amortized task/edge creation cost.
    Overhead(OverheadArgs),
}

#[derive(Args)]
struct WorkloadArgs {
    /// Workload: "random", "chain", or "corpus:<name>".
    #[arg(long, value_parser = parse_generator, default_value = "random")]
    gen: Generator,

    /// Node count for generated workloads.
    #[arg(long, default_value_t = 1000)]
    nodes: usize,

    /// Adjacent-layer edge probability for the random generator.
    #[arg(long, default_value_t = 0.1)]
    edge_prob: f64,

    /// Domain count for the random generator.
    #[arg(long, default_value_t = 1)]
    domains: usize,

    /// Comma-separated workers per domain, e.g. "4,2".
    #[arg(long, value_parser = parse_workers, default_value = "2")]
    workers: Vec<usize>,

    /// Base seed; repetition r uses seed + r.
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Repetitions.
    #[arg(long, default_value_t = 1)]
    reps: usize,

    /// MAX_STEALS = this multiplier x total workers.
    #[arg(long, default_value_t = 10)]
    max_steals_mult: usize,

    /// Per-run watchdog in seconds.
    #[arg(long, default_value_t = 60)]
    watchdog_secs: u64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    workload: WorkloadArgs,

    /// Write the key=value report here.
    #[arg(long)]
    report: Option<PathBuf>,

    /// Write the scheduler event trace here.
    #[arg(long)]
    trace: Option<PathBuf>,

    /// Write the workload graph as DOT here.
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Args)]
struct CorunArgs {
    #[command(flatten)]
    workload: WorkloadArgs,

    /// Concurrent copies of the workload.
    #[arg(long, default_value_t = 2)]
    processes: usize,

    /// Write the key=value report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct OverheadArgs {
    /// Operations to amortize over.
    #[arg(long, default_value_t = 1_000_000)]
    ops: usize,

    /// Write the key=value report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_generator(s: &str) -> Result<Generator, String> {
    match s {
        "random" => Ok(Generator::RandomDag),
        "chain" => Ok(Generator::SerialChain),
        other => match other.strip_prefix("corpus:") {
            Some(name) if !name.is_empty() => Ok(Generator::Corpus(name.to_string())),
            _ => Err(format!(
                "unknown generator '{other}' (expected random, chain, or corpus:<name>)"
            )),
        },
    }
}

fn parse_workers(s: &str) -> Result<Vec<usize>, String> {
    let ws: Result<Vec<usize>, _> = s.split(',').map(|p| p.trim().parse::<usize>()).collect();
    match ws {
        Ok(ws) if !ws.is_empty() && ws.iter().all(|&w| w > 0) => Ok(ws),
        _ => Err(format!("invalid worker list '{s}' (expected e.g. 4,2)")),
    }
}

fn to_config(w: &WorkloadArgs) -> BenchConfig {
    let mut workers = w.workers.clone();
    // `--domains` widens a short worker list with single-worker domains so
    // random multi-domain workloads do not need both flags.
    while workers.len() < w.domains {
        workers.push(1);
    }
    BenchConfig {
        generator: w.gen.clone(),
        nodes: w.nodes,
        edge_prob: w.edge_prob,
        domains: workers.len().max(w.domains),
        domain_weights: Vec::new(),
        seed: w.seed,
        workers_per_domain: workers,
        reps: w.reps,
        max_steals_multiplier: w.max_steals_mult,
        watchdog: Duration::from_secs(w.watchdog_secs),
    }
}

fn write_out(path: &Option<PathBuf>, contents: &str) -> Result<(), String> {
    if let Some(path) = path {
        std::fs::write(path, contents).map_err(|e| format!("writing {}: {e}", path.display()))?;
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode, String> {
    let cfg = to_config(&args.workload);
    cfg.validate().map_err(|e| e.to_string())?;
    let outcome = run_bench(&cfg).map_err(|e| e.to_string())?;
    let text = report_to_text(&outcome.report);
    print!("{text}");
    write_out(&args.report, &text)?;
    if let Some(trace) = &outcome.trace {
        write_out(&args.trace, &trace.to_text())?;
    }
    write_out(&args.dot, &outcome.dot)?;
    if outcome.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &outcome.failures {
            eprintln!("FAIL: {f}");
        }
        Ok(ExitCode::from(1))
    }
}

fn cmd_corun(args: &CorunArgs) -> Result<ExitCode, String> {
    let cfg = to_config(&args.workload);
    cfg.validate().map_err(|e| e.to_string())?;
    let report = corun_throughput(&cfg, args.processes).map_err(|e| e.to_string())?;
    let mut out = String::new();
    out.push_str(&format!("baseline_ms={:.3}\n", report.baseline_ms));
    for (i, t) in report.corun_ms.iter().enumerate() {
        out.push_str(&format!("corun_{i}_ms={t:.3}\n"));
    }
    out.push_str(&format!("processes={}\n", args.processes));
    out.push_str(&format!("weighted_speedup={:.4}\n", report.weighted_speedup));
    print!("{out}");
    write_out(&args.report, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_overhead(args: &OverheadArgs) -> Result<ExitCode, String> {
    let r = creation_overhead(args.ops);
    let mut out = String::new();
    out.push_str(&format!("ops={}\n", r.ops));
    out.push_str(&format!("per_edge_ns={:.2}\n", r.per_edge_ns));
    out.push_str(&format!("per_task_ns={:.2}\n", r.per_task_ns));
    print!("{out}");
    write_out(&args.report, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Corun(args) => cmd_corun(args),
        Command::Overhead(args) => cmd_overhead(args),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
