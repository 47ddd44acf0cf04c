//! Run metrics: per-run rows, paired aggregates, JSONL persistence, and
//! report rendering.
//!
//! The JSONL layout is one row object per line and one trailing footer
//! object `{"aggregate": ...}`. Rendering is a pure function of the rows;
//! reports are byte-identical for identical inputs except for the single
//! `generated:` line, which carries the caller-supplied timestamp.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::executor::ExecutionRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub task: String,
    pub seed: u64,
    pub monitored: bool,
    /// 1 - min(1, relative error); absent when no ground truth is known.
    #[serde(default)]
    pub score: Option<f64>,
    #[serde(default)]
    pub relative_error: Option<f64>,
    /// Critical-path latency in seconds.
    pub latency_s: f64,
    pub corrections: u64,
    pub rollbacks: u64,
    pub degraded: bool,
    pub monitoring_debt: u64,
    pub attempts: u64,
}

/// Build a row from a finished run. `truth` is the expected final value
/// when the task has one.
pub fn row_for_run(
    task: impl Into<String>,
    seed: u64,
    monitored: bool,
    truth: Option<f64>,
    record: &ExecutionRecord,
) -> RunRow {
    let relative_error = truth.and_then(|t| {
        record.final_output.value().map(|v| {
            let denom = t.abs().max(1.0);
            (v - t).abs() / denom
        })
    });
    RunRow {
        task: task.into(),
        seed,
        monitored,
        score: relative_error.map(|e| (1.0 - e.min(1.0)).max(0.0)),
        relative_error,
        latency_s: record.critical_path_nanos as f64 / 1e9,
        corrections: record.corrections.len() as u64,
        rollbacks: record.rollbacks,
        degraded: record.degraded,
        monitoring_debt: record.debt.total(),
        attempts: record.attempts_total,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub runs: u64,
    pub mean_score: Option<f64>,
    pub mean_latency_s: f64,
    pub corrections: u64,
    pub degraded_runs: u64,
    pub monitoring_debt: u64,
    /// Mean critical-path overhead of monitored runs against same-seed
    /// unmonitored baselines; present only when such pairs exist.
    pub overhead_pct: Option<f64>,
    /// Mean score gain (percentage points) over the same pairs.
    pub improvement_pct: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<RunRow>,
}

#[derive(Serialize, Deserialize)]
struct Footer {
    aggregate: AggregateStats,
}

impl MetricsLog {
    pub fn new() -> MetricsLog {
        MetricsLog { rows: Vec::new() }
    }

    pub fn push(&mut self, row: RunRow) {
        self.rows.push(row);
    }

    /// Pairs are formed per seed: first monitored row with first
    /// unmonitored row. Overhead and improvement exist only over pairs.
    pub fn aggregate(&self) -> AggregateStats {
        let runs = self.rows.len() as u64;
        let scored: Vec<f64> = self.rows.iter().filter_map(|r| r.score).collect();
        let mean_score = if scored.is_empty() {
            None
        } else {
            Some(scored.iter().sum::<f64>() / scored.len() as f64)
        };
        let mean_latency_s = if self.rows.is_empty() {
            0.0
        } else {
            self.rows.iter().map(|r| r.latency_s).sum::<f64>() / runs as f64
        };

        let mut by_seed: BTreeMap<u64, (Option<&RunRow>, Option<&RunRow>)> = BTreeMap::new();
        for row in &self.rows {
            let slot = by_seed.entry(row.seed).or_default();
            if row.monitored {
                slot.0.get_or_insert(row);
            } else {
                slot.1.get_or_insert(row);
            }
        }
        let mut overheads = Vec::new();
        let mut improvements = Vec::new();
        for (monitored, baseline) in by_seed.values() {
            let (Some(m), Some(b)) = (monitored, baseline) else { continue };
            if b.latency_s > 0.0 {
                overheads.push((m.latency_s - b.latency_s) / b.latency_s * 100.0);
            }
            if let (Some(ms), Some(bs)) = (m.score, b.score) {
                improvements.push((ms - bs) * 100.0);
            }
        }
        let mean = |v: &[f64]| {
            if v.is_empty() {
                None
            } else {
                Some(v.iter().sum::<f64>() / v.len() as f64)
            }
        };

        AggregateStats {
            runs,
            mean_score,
            mean_latency_s,
            corrections: self.rows.iter().map(|r| r.corrections).sum(),
            degraded_runs: self.rows.iter().filter(|r| r.degraded).count() as u64,
            monitoring_debt: self.rows.iter().map(|r| r.monitoring_debt).sum(),
            overhead_pct: mean(&overheads),
            improvement_pct: mean(&improvements),
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for row in &self.rows {
            serde_json::to_writer(&mut w, row)?;
            writeln!(w)?;
        }
        serde_json::to_writer(&mut w, &Footer { aggregate: self.aggregate() })?;
        writeln!(w)?;
        Ok(())
    }

    /// Footer lines are recognized and skipped; the aggregate is always
    /// re-derived from the rows so merged files stay consistent.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<MetricsLog> {
        let mut log = MetricsLog::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if serde_json::from_str::<Footer>(&line).is_ok() {
                continue;
            }
            let row: RunRow = serde_json::from_str(&line)
                .map_err(|e| Error::Config(format!("bad metrics line: {e}")))?;
            log.push(row);
        }
        Ok(log)
    }

    pub fn render_markdown(&self, timestamp: &str) -> String {
        let mut out = String::new();
        out.push_str("# run metrics\n\n");
        let _ = writeln!(out, "generated: {timestamp}\n");
        out.push_str("| task | seed | monitored | score | latency_s | corrections | rollbacks | debt | degraded |\n");
        out.push_str("|---|---|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {:.6} | {} | {} | {} | {} |",
                r.task,
                r.seed,
                yes_no(r.monitored),
                opt(r.score),
                r.latency_s,
                r.corrections,
                r.rollbacks,
                r.monitoring_debt,
                yes_no(r.degraded),
            );
        }
        let a = self.aggregate();
        out.push_str("\n## aggregate\n\n");
        out.push_str("| runs | mean_score | mean_latency_s | corrections | degraded_runs | debt | overhead_pct | improvement_pct |\n");
        out.push_str("|---|---|---|---|---|---|---|---|\n");
        let _ = writeln!(
            out,
            "| {} | {} | {:.6} | {} | {} | {} | {} | {} |",
            a.runs,
            opt(a.mean_score),
            a.mean_latency_s,
            a.corrections,
            a.degraded_runs,
            a.monitoring_debt,
            opt(a.overhead_pct),
            opt(a.improvement_pct),
        );
        out
    }

    pub fn render_csv(&self, timestamp: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# generated: {timestamp}");
        out.push_str("kind,task,seed,monitored,score,latency_s,corrections,rollbacks,debt,degraded\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "row,{},{},{},{},{:.6},{},{},{},{}",
                r.task,
                r.seed,
                r.monitored,
                opt(r.score),
                r.latency_s,
                r.corrections,
                r.rollbacks,
                r.monitoring_debt,
                r.degraded,
            );
        }
        let a = self.aggregate();
        let _ = writeln!(
            out,
            "aggregate,,{},,{},{:.6},{},{},{},{}",
            a.runs,
            opt(a.mean_score),
            a.mean_latency_s,
            a.corrections,
            a.degraded_runs,
            a.monitoring_debt,
            opt(a.overhead_pct),
        );
        out
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "n/a".to_string(),
    }
}
