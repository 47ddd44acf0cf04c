use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use argus::config::WorkflowFile;
use argus::executor::run_workflow;
use argus::metrics::{row_for_run, MetricsLog};
use argus::suites::{run_suite, SuiteParams};

#[derive(Parser)]
#[command(name = "argus", version, about = "Workflow runtime with asynchronous output monitoring")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a workflow file and report structural problems.
    Validate { file: PathBuf },
    /// Execute a workflow file and print a run summary.
    Run {
        file: PathBuf,
        /// Override the run seed from the file.
        #[arg(long)]
        seed: Option<u64>,
        /// Cap on retained snapshots (frontier is always kept).
        #[arg(long)]
        budget: Option<usize>,
        /// Strip all monitors: execute the same workflow unwatched.
        #[arg(long)]
        no_monitor: bool,
        /// Append a metrics row to this JSONL file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in simulation suite; exits nonzero unless every
    /// criterion passes.
    Simulate {
        /// One of: propagation, convergence, overhead, amortized,
        /// hcv-blindspot.
        suite: String,
        /// Chain depth, where the suite has one.
        #[arg(long)]
        n: Option<usize>,
        /// Per-node error size or probability, where the suite has one.
        #[arg(long)]
        eps: Option<f64>,
        /// Trial count override.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Merge metrics JSONL files into a report on stdout.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Md)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Md,
    Csv,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let result = rt.block_on(async {
        match cli.cmd {
            Cmd::Validate { file } => cmd_validate(&file),
            Cmd::Run { file, seed, budget, no_monitor, out } => {
                cmd_run(&file, seed, budget, no_monitor, out.as_deref()).await
            }
            Cmd::Simulate { suite, n, eps, trials, seed } => {
                cmd_simulate(&suite, n, eps, trials, seed).await
            }
            Cmd::Report { files, format } => cmd_report(&files, format),
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_validate(file: &Path) -> anyhow::Result<ExitCode> {
    let wf = WorkflowFile::load(file).with_context(|| format!("reading {}", file.display()))?;
    let issues = wf.validate()?;
    if issues.is_empty() {
        println!("ok: {} nodes, {} edges", wf.nodes.len(), wf.edges.len());
        Ok(ExitCode::SUCCESS)
    } else {
        for issue in &issues {
            println!("issue: {issue}");
        }
        Ok(ExitCode::FAILURE)
    }
}

async fn cmd_run(
    file: &Path,
    seed: Option<u64>,
    budget: Option<usize>,
    no_monitor: bool,
    out: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let mut wf = WorkflowFile::load(file).with_context(|| format!("reading {}", file.display()))?;
    let issues = wf.validate()?;
    if !issues.is_empty() {
        for issue in &issues {
            eprintln!("issue: {issue}");
        }
        anyhow::bail!("workflow file has {} structural issue(s)", issues.len());
    }
    if no_monitor {
        for node in &mut wf.nodes {
            node.monitor = None;
        }
    }

    let task = file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "workflow".to_string());
    let mut cfg = wf.run_config(&task);
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if budget.is_some() {
        cfg.snapshot_budget = budget;
    }

    let graph = Arc::new(wf.graph());
    let registry = Arc::new(wf.registry()?);
    let record = run_workflow(graph, registry, &cfg).await?;

    println!("run: {}", record.run_id);
    println!("final: {}", record.final_output.digest());
    if let Some(v) = record.final_output.value() {
        println!("value: {v}");
    }
    println!("attempts: {}", record.attempts_total);
    println!("corrections: {}", record.corrections.len());
    println!("rollbacks: {}", record.rollbacks);
    println!("degraded: {}", record.degraded);
    println!("monitoring-debt: {}", record.debt.total());
    println!(
        "critical-path-ms: {:.3}",
        record.critical_path_nanos as f64 / 1e6
    );
    println!("wall-ms: {:.3}", record.wall_nanos as f64 / 1e6);

    if let Some(out) = out {
        let mut log = match File::open(out) {
            Ok(f) => MetricsLog::read_jsonl(BufReader::new(f))?,
            Err(_) => MetricsLog::new(),
        };
        log.push(row_for_run(
            &task,
            cfg.seed,
            !no_monitor,
            wf.expected_final_value(),
            &record,
        ));
        let mut w = BufWriter::new(File::create(out)?);
        log.write_jsonl(&mut w)?;
        w.flush()?;
        println!("metrics: {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

async fn cmd_simulate(
    suite: &str,
    n: Option<usize>,
    eps: Option<f64>,
    trials: Option<usize>,
    seed: u64,
) -> anyhow::Result<ExitCode> {
    let params = SuiteParams { n, eps, trials, seed };
    let outcome = run_suite(suite, &params).await?;
    for line in outcome.lines() {
        println!("{line}");
    }
    let passed = outcome.passed();
    println!(
        "suite {}: {} ({} criteria, {:.1}s)",
        outcome.suite,
        if passed { "PASSED" } else { "FAILED" },
        outcome.criteria.len(),
        outcome.wall.as_secs_f64()
    );
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_report(files: &[PathBuf], format: Format) -> anyhow::Result<ExitCode> {
    let mut merged = MetricsLog::new();
    for path in files {
        let f = File::open(path).with_context(|| format!("reading {}", path.display()))?;
        let log = MetricsLog::read_jsonl(BufReader::new(f))?;
        merged.rows.extend(log.rows);
    }
    let ts = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let stamp = format!("unix {ts}");
    let rendered = match format {
        Format::Md => merged.render_markdown(&stamp),
        Format::Csv => merged.render_csv(&stamp),
    };
    print!("{rendered}");
    Ok(ExitCode::SUCCESS)
}
