//! Contextual rollback: plan a corrected re-execution of a failing node.
//!
//! A rollback is not a bare retry. The re-dispatched attempt carries an
//! augmented prompt embedding the original input, the failed output, the
//! verdict, and an avoid-list of failed-output digests, plus a perturbation
//! directive: a fresh seed offset per attempt and a temperature escalation
//! that grows only when the node keeps producing byte-identical failures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::monitor::{ErrorCategory, Verdict};
use crate::payload::Epoch;
use crate::snapshot::SnapshotKey;
use crate::store::SnapshotStore;

pub const TEMPERATURE_STEP: f64 = 0.2;
pub const TEMPERATURE_CAP: f64 = 0.6;

/// Default augmentation template, shipped as data. `{input}`,
/// `{failed_output}`, `{category}`, `{rationale}`, `{avoid_list}` and
/// `{format_guidance}` are the placeholders; everything else is prose.
pub const DEFAULT_AUGMENT_TEMPLATE: &str = include_str!("../templates/augment_default.txt");
/// Format restatement block injected only for format-category failures.
pub const FORMAT_GUIDANCE: &str = include_str!("../templates/format_guidance.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationDirective {
    /// Effective decoding seed is the node's base seed plus this offset;
    /// attempt k uses offset k.
    pub seed_offset: u64,
    /// Added to the run temperature, growing by `TEMPERATURE_STEP` per
    /// repetition of an identical failed output, capped at
    /// `TEMPERATURE_CAP`.
    pub temperature_delta: f64,
    /// Digests of all failed outputs in this node's lineage.
    pub avoid_digests: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollbackPlan {
    pub target: SnapshotKey,
    /// Snapshot the corrected attempt restores its context from.
    pub restore_from: SnapshotKey,
    pub next_attempt: u32,
    pub augmented_prompt: String,
    pub perturbation: PerturbationDirective,
}

/// A failing verdict bound to the snapshot it judged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRequest {
    pub target: SnapshotKey,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub epoch: Epoch,
    pub output_digest: String,
    /// Monitor's view of the output, once assessed. Quality is the
    /// verdict's score for the output itself (not the failure call).
    pub verdict: Option<Verdict>,
}

impl AttemptRecord {
    fn quality(&self) -> Option<f64> {
        self.verdict.as_ref().map(|v| {
            if v.pass {
                v.confidence
            } else {
                1.0 - v.confidence
            }
        })
    }

    fn failed(&self) -> bool {
        self.verdict.as_ref().is_some_and(|v| !v.pass && !v.unavailable)
    }
}

/// Per-node lineage of corrected attempts across epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptHistory {
    pub node: NodeId,
    pub records: Vec<AttemptRecord>,
}

impl AttemptHistory {
    pub fn new(node: NodeId) -> AttemptHistory {
        AttemptHistory { node, records: Vec::new() }
    }

    pub fn record_attempt(&mut self, attempt: u32, epoch: Epoch, output_digest: impl Into<String>) {
        self.records.push(AttemptRecord {
            attempt,
            epoch,
            output_digest: output_digest.into(),
            verdict: None,
        });
    }

    pub fn record_verdict(&mut self, attempt: u32, epoch: Epoch, verdict: Verdict) {
        if let Some(r) = self
            .records
            .iter_mut()
            .rev()
            .find(|r| r.attempt == attempt && r.epoch == epoch)
        {
            r.verdict = Some(verdict);
        }
    }

    pub fn next_attempt(&self) -> u32 {
        self.records.iter().map(|r| r.attempt + 1).max().unwrap_or(0)
    }

    /// Corrections already spent on this node.
    pub fn corrections_used(&self) -> u32 {
        self.next_attempt().saturating_sub(1)
    }

    /// How many earlier failed attempts produced exactly this output.
    pub fn identical_failure_repeats(&self, digest: &str) -> usize {
        let failures: Vec<&AttemptRecord> =
            self.records.iter().filter(|r| r.failed()).collect();
        match failures.len() {
            0 => 0,
            // The latest failure is the one being corrected; repeats count
            // among the ones before it.
            n => failures[..n - 1]
                .iter()
                .filter(|r| r.output_digest == digest)
                .count(),
        }
    }

    pub fn failed_digests(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in self.records.iter().filter(|r| r.failed()) {
            if !out.contains(&r.output_digest) {
                out.push(r.output_digest.clone());
            }
        }
        out
    }
}

/// Augmentation template with named placeholders; a custom template file
/// may replace the shipped default.
#[derive(Debug, Clone)]
pub struct AugmentTemplate {
    text: String,
}

impl Default for AugmentTemplate {
    fn default() -> AugmentTemplate {
        AugmentTemplate { text: DEFAULT_AUGMENT_TEMPLATE.to_string() }
    }
}

impl AugmentTemplate {
    pub fn from_text(text: impl Into<String>) -> AugmentTemplate {
        AugmentTemplate { text: text.into() }
    }

    pub fn from_file(path: &std::path::Path) -> Result<AugmentTemplate> {
        Ok(AugmentTemplate { text: std::fs::read_to_string(path)? })
    }

    pub fn render(
        &self,
        input: &str,
        failed_output: &str,
        category: ErrorCategory,
        rationale: &str,
        avoid: &[String],
    ) -> String {
        let avoid_list = if avoid.is_empty() {
            "(none)".to_string()
        } else {
            avoid
                .iter()
                .map(|d| format!("- {d}"))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let format_guidance = if category == ErrorCategory::Format {
            format!("\n{FORMAT_GUIDANCE}")
        } else {
            String::new()
        };
        self.text
            .replace("{input}", input)
            .replace("{failed_output}", failed_output)
            .replace("{category}", &category.to_string())
            .replace("{rationale}", rationale)
            .replace("{avoid_list}", &avoid_list)
            .replace("{format_guidance}", &format_guidance)
    }
}

/// Build the corrected re-execution for `request.target`. Fails with
/// `SnapshotNotFound` when the snapshot was pruned; the caller accepts the
/// degraded output instead of correcting blind.
pub fn plan_rollback(
    store: &SnapshotStore,
    history: &AttemptHistory,
    request: &CorrectionRequest,
    template: &AugmentTemplate,
) -> Result<RollbackPlan> {
    let snapshot = store.get(&request.target)?;
    let verdict = &request.verdict;
    if verdict.pass {
        return Err(Error::Config("cannot plan a rollback for a passing verdict".into()));
    }

    let next_attempt = history.next_attempt().max(snapshot.attempt + 1);
    let failed_digest = snapshot.output.digest();
    let repeats = history.identical_failure_repeats(&failed_digest);
    let temperature_delta =
        (TEMPERATURE_STEP * repeats as f64).min(TEMPERATURE_CAP);

    let mut avoid = history.failed_digests();
    if !avoid.contains(&failed_digest) {
        avoid.push(failed_digest);
    }

    let augmented_prompt = template.render(
        &snapshot.input.content,
        &snapshot.output.content,
        verdict.category,
        &verdict.rationale,
        &avoid,
    );

    Ok(RollbackPlan {
        target: request.target.clone(),
        restore_from: request.target.clone(),
        next_attempt,
        augmented_prompt,
        perturbation: PerturbationDirective {
            seed_offset: u64::from(next_attempt),
            temperature_delta,
            avoid_digests: avoid,
        },
    })
}

/// Best attempt to commit once the correction budget is exhausted: highest
/// quality wins, and among equals the most recent attempt wins.
#[derive(Debug, Clone, PartialEq)]
pub struct BestAttempt {
    pub attempt: u32,
    pub epoch: Epoch,
    pub quality: f64,
}

pub fn give_up(history: &AttemptHistory) -> Result<BestAttempt> {
    let mut best: Option<BestAttempt> = None;
    for r in &history.records {
        let quality = r.quality().unwrap_or(0.0);
        let replace = match &best {
            None => true,
            // `>=` gives recency the tie-break: later records overwrite.
            Some(b) => quality >= b.quality,
        };
        if replace {
            best = Some(BestAttempt { attempt: r.attempt, epoch: r.epoch, quality });
        }
    }
    best.ok_or_else(|| Error::Config(format!("give_up with no attempts for {}", history.node)))
}
