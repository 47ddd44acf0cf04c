//! Monitoring engine: dimension scores, verdict synthesis, and error
//! classification.
//!
//! A monitor backend returns raw per-dimension scores; this module turns
//! them into a `Verdict` with an aggregate confidence and an error category.
//! Classification is rule-based and deterministic: the lowest-scoring
//! failing dimension names the category, and a signature ledger upgrades
//! repeats of the same failure shape to `systematic`. Backend outages fail
//! open with an explicit monitor-unavailable verdict so the workflow never
//! blocks on its own oversight.

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::backends::{JudgeRequest, MonitorBackend};
use crate::error::{Error, Result};
use crate::snapshot::Snapshot;

pub const DEFAULT_DIMENSION_CUTOFF: f64 = 0.5;
/// Distinct (node, attempt) occurrences of one signature that make a
/// failure systematic.
pub const SYSTEMATIC_REPEAT_THRESHOLD: usize = 2;
pub const DEFAULT_MONITOR_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionScores {
    pub logical_consistency: f64,
    pub format_compliance: f64,
    pub content_completeness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Dimension {
    Logic,
    Format,
    Content,
}

impl DimensionScores {
    pub fn new(logic: f64, format: f64, content: f64) -> Result<DimensionScores> {
        let s = DimensionScores {
            logical_consistency: logic,
            format_compliance: format,
            content_completeness: content,
        };
        for (_, v) in s.iter() {
            if !(0.0..=1.0).contains(&v) || v.is_nan() {
                return Err(Error::Config(format!("dimension score out of [0,1]: {v}")));
            }
        }
        Ok(s)
    }

    pub fn perfect() -> DimensionScores {
        DimensionScores {
            logical_consistency: 1.0,
            format_compliance: 1.0,
            content_completeness: 1.0,
        }
    }

    /// Tie-break order is the iteration order: logic, format, content.
    pub fn iter(&self) -> impl Iterator<Item = (Dimension, f64)> {
        [
            (Dimension::Logic, self.logical_consistency),
            (Dimension::Format, self.format_compliance),
            (Dimension::Content, self.content_completeness),
        ]
        .into_iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCategory {
    Logic,
    Format,
    Content,
    Systematic,
    None,
}

impl std::fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ErrorCategory::Logic => "logic",
            ErrorCategory::Format => "format",
            ErrorCategory::Content => "content",
            ErrorCategory::Systematic => "systematic",
            ErrorCategory::None => "none",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub category: ErrorCategory,
    /// Aggregate confidence that the failure call is right; for passing
    /// verdicts, confidence in the output itself.
    pub confidence: f64,
    pub rationale: String,
    pub dimensions: DimensionScores,
    pub monitor: String,
    /// Fail-open marker: the backend was unreachable, so `pass` is vacuous
    /// and the run carries monitoring debt instead of an assessment.
    #[serde(default)]
    pub unavailable: bool,
}

impl Verdict {
    pub fn unavailable(monitor: &str, detail: &str) -> Verdict {
        Verdict {
            pass: true,
            category: ErrorCategory::None,
            confidence: 0.0,
            rationale: format!("monitor unavailable: {detail}"),
            dimensions: DimensionScores::perfect(),
            monitor: monitor.to_string(),
            unavailable: true,
        }
    }
}

/// How per-dimension scores collapse into one confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum AggregationRule {
    Min,
    WeightedMean { logic: f64, format: f64, content: f64 },
}

impl Default for AggregationRule {
    fn default() -> AggregationRule {
        AggregationRule::Min
    }
}

pub fn aggregate(scores: &DimensionScores, rule: &AggregationRule) -> Result<f64> {
    match rule {
        AggregationRule::Min => Ok(scores
            .iter()
            .map(|(_, v)| v)
            .fold(f64::INFINITY, f64::min)),
        AggregationRule::WeightedMean { logic, format, content } => {
            let sum = logic + format + content;
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::BadWeights(sum));
            }
            Ok(logic * scores.logical_consistency
                + format * scores.format_compliance
                + content * scores.content_completeness)
        }
    }
}

/// Per-dimension failure cutoffs; a dimension fails strictly below its
/// cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionCutoffs {
    pub logic: f64,
    pub format: f64,
    pub content: f64,
}

impl Default for DimensionCutoffs {
    fn default() -> DimensionCutoffs {
        DimensionCutoffs {
            logic: DEFAULT_DIMENSION_CUTOFF,
            format: DEFAULT_DIMENSION_CUTOFF,
            content: DEFAULT_DIMENSION_CUTOFF,
        }
    }
}

impl DimensionCutoffs {
    fn for_dim(&self, d: Dimension) -> f64 {
        match d {
            Dimension::Logic => self.logic,
            Dimension::Format => self.format,
            Dimension::Content => self.content,
        }
    }
}

/// Category of the lowest-scoring failing dimension; ties resolve in
/// logic > format > content order via stable min. `repeated_signature`
/// upgrades any failure to `Systematic`; without a failing dimension the
/// outcome is `None` regardless.
pub fn classify(
    scores: &DimensionScores,
    cutoffs: &DimensionCutoffs,
    repeated_signature: bool,
) -> ErrorCategory {
    let mut worst: Option<(Dimension, f64)> = None;
    for (dim, v) in scores.iter() {
        if v < cutoffs.for_dim(dim) && worst.map_or(true, |(_, w)| v < w) {
            worst = Some((dim, v));
        }
    }
    match worst {
        Option::None => ErrorCategory::None,
        Some(_) if repeated_signature => ErrorCategory::Systematic,
        Some((Dimension::Logic, _)) => ErrorCategory::Logic,
        Some((Dimension::Format, _)) => ErrorCategory::Format,
        Some((Dimension::Content, _)) => ErrorCategory::Content,
    }
}

/// Digest of category plus rationale stem. The stem drops digits and
/// punctuation so "expected 6, got 6.6" and "expected 8, got 8.8" collide:
/// the same failure shape at different nodes is one signature.
pub fn signature(category: ErrorCategory, rationale: &str) -> String {
    let stem: String = rationale
        .to_lowercase()
        .chars()
        .filter(|c| c.is_ascii_alphabetic() || *c == ' ')
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .chars()
        .take(80)
        .collect();
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(category.to_string().as_bytes());
    h.update(b"|");
    h.update(stem.as_bytes());
    let out = h.finalize();
    let mut s = String::with_capacity(16);
    for b in &out[..8] {
        use std::fmt::Write;
        write!(s, "{b:02x}").unwrap();
    }
    s
}

/// Run-scoped ledger of failure signatures and where they occurred.
#[derive(Debug, Default)]
pub struct SignatureLedger {
    seen: Mutex<std::collections::BTreeMap<String, BTreeSet<String>>>,
}

impl SignatureLedger {
    pub fn new() -> SignatureLedger {
        SignatureLedger::default()
    }

    /// Record one occurrence; returns the count of distinct (node, attempt)
    /// occurrences including this one.
    pub fn record(&self, sig: &str, node: &crate::graph::NodeId, attempt: u32) -> usize {
        let mut seen = self.seen.lock().expect("ledger lock");
        let entry = seen.entry(sig.to_string()).or_default();
        entry.insert(format!("{node}#{attempt}"));
        entry.len()
    }

    pub fn occurrences(&self, sig: &str) -> usize {
        self.seen
            .lock()
            .expect("ledger lock")
            .get(sig)
            .map_or(0, |s| s.len())
    }
}

/// One monitor backend plus the policy that turns its judgments into
/// verdicts. Shared across assessments of a run.
pub struct Assessor {
    backend: Arc<dyn MonitorBackend>,
    pub rule: AggregationRule,
    pub cutoffs: DimensionCutoffs,
    pub timeout: Duration,
    ledger: Arc<SignatureLedger>,
}

impl Assessor {
    pub fn new(backend: Arc<dyn MonitorBackend>, ledger: Arc<SignatureLedger>) -> Assessor {
        Assessor {
            backend,
            rule: AggregationRule::Min,
            cutoffs: DimensionCutoffs::default(),
            timeout: DEFAULT_MONITOR_TIMEOUT,
            ledger,
        }
    }

    pub fn with_rule(mut self, rule: AggregationRule) -> Assessor {
        self.rule = rule;
        self
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Assess one snapshot. Never returns an error for backend trouble:
    /// outages become an explicit unavailable verdict (fail open).
    pub async fn assess(&self, snapshot: &Snapshot, seed: u64) -> Result<Verdict> {
        let req = JudgeRequest {
            node: snapshot.node.clone(),
            output: snapshot.output.clone(),
            trace: snapshot.reasoning_trace.clone(),
            context: snapshot.context.clone(),
            seed,
        };
        let started = Instant::now();
        let judged = tokio::time::timeout(self.timeout, self.backend.judge(req)).await;
        let _elapsed = started.elapsed();
        let judgment = match judged {
            Ok(Ok(j)) => j,
            Ok(Err(e)) => return Ok(Verdict::unavailable(self.backend.name(), &e.to_string())),
            Err(_) => {
                return Ok(Verdict::unavailable(
                    self.backend.name(),
                    &format!("timed out after {:?}", self.timeout),
                ))
            }
        };

        // Out-of-range scores are a backend defect, not a workflow failure.
        let scores = DimensionScores::new(
            judgment.scores.logical_consistency,
            judgment.scores.format_compliance,
            judgment.scores.content_completeness,
        );
        let scores = match scores {
            Ok(s) => s,
            Err(e) => return Ok(Verdict::unavailable(self.backend.name(), &e.to_string())),
        };

        let confidence = aggregate(&scores, &self.rule)?;
        let mut category = classify(&scores, &self.cutoffs, false);
        if category != ErrorCategory::None {
            let sig = signature(category, &judgment.rationale);
            let occurrences = self.ledger.record(&sig, &snapshot.node, snapshot.attempt);
            if occurrences >= SYSTEMATIC_REPEAT_THRESHOLD {
                category = ErrorCategory::Systematic;
            }
        }

        Ok(Verdict {
            pass: category == ErrorCategory::None,
            category,
            confidence: if category == ErrorCategory::None {
                confidence
            } else {
                // Confidence in the failure call grows as scores drop.
                1.0 - confidence
            },
            rationale: judgment.rationale,
            dimensions: scores,
            monitor: self.backend.name().to_string(),
            unavailable: false,
        })
    }
}
