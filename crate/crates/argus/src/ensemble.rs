//! Cross-validation by a heterogeneous monitor ensemble.
//!
//! A single monitor sharing the executing agent's architecture can share its
//! blind spots. An ensemble spread over architectures votes on each output;
//! the disagreement rate and the entropy of the category distribution
//! quantify how split the panel is, and a dedicated flag marks the telltale
//! shape of a shared blind spot: same-architecture members all pass while
//! the cross-architecture majority fails.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::{JudgeRequest, MonitorBackend};
use crate::error::{Error, Result};
use crate::monitor::{aggregate, classify, AggregationRule, DimensionCutoffs, ErrorCategory, Verdict};
use crate::seed;

pub const DEFAULT_DISAGREEMENT_CUTOFF: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSpec {
    pub backend: String,
    /// Declared architecture tag; authoritative over the backend's own.
    pub architecture: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: Vec<MemberSpec>,
    /// Architecture of the executing agent, for blind-spot detection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execution_architecture: Option<String>,
    /// Disagreement rate at or above which escalation corrects.
    #[serde(default = "default_disagreement_cutoff")]
    pub disagreement_cutoff: f64,
    /// Report-only: entropy above this is worth a look, but it never drives
    /// the escalation decision.
    #[serde(default = "default_entropy_note")]
    pub entropy_note: f64,
}

fn default_disagreement_cutoff() -> f64 {
    DEFAULT_DISAGREEMENT_CUTOFF
}
fn default_entropy_note() -> f64 {
    0.75
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.members.len() < 2 {
            return Err(Error::Config(format!(
                "ensemble needs at least 2 members, got {}",
                self.members.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberVerdict {
    pub member: String,
    pub architecture: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementReport {
    pub member_verdicts: Vec<MemberVerdict>,
    /// Members that returned a usable verdict.
    pub k_effective: usize,
    pub excluded: usize,
    /// Fraction of unordered member pairs whose pass flags differ.
    pub disagreement: f64,
    /// Normalized entropy of the category distribution: 0 when unanimous,
    /// 1 when categories are uniform over those present.
    pub entropy: f64,
    pub majority_category: ErrorCategory,
    pub majority_pass: bool,
    pub systematic_flag: bool,
    /// Fewer than 2 usable verdicts: no decision can be made.
    pub inconclusive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EscalationDecision {
    Accept,
    Correct,
    FlagSystematic,
}

/// Run every member against the same output concurrently and fold the
/// verdicts into a report. Member verdict seeds derive from the member name,
/// so the report is a pure function of (request, spec, seed) regardless of
/// completion order. Failed members are excluded and counted.
pub async fn cross_validate(
    req: &JudgeRequest,
    spec: &EnsembleSpec,
    members: &[(MemberSpec, Arc<dyn MonitorBackend>)],
    rule: &AggregationRule,
    cutoffs: &DimensionCutoffs,
) -> Result<DisagreementReport> {
    spec.validate()?;

    let futures = members.iter().map(|(member, backend)| {
        let mut member_req = req.clone();
        member_req.seed = seed::derive(req.seed, &["member", &member.backend]);
        async move {
            let judged = backend.judge(member_req).await;
            (member.clone(), judged)
        }
    });
    let raw = futures::future::join_all(futures).await;

    let mut member_verdicts = Vec::new();
    let mut excluded = 0usize;
    for (member, judged) in raw {
        match judged {
            Ok(j) => {
                let confidence = aggregate(&j.scores, rule)?;
                let category = classify(&j.scores, cutoffs, false);
                let pass = category == ErrorCategory::None;
                member_verdicts.push(MemberVerdict {
                    member: member.backend.clone(),
                    architecture: member.architecture.clone(),
                    verdict: Verdict {
                        pass,
                        category,
                        confidence: if pass { confidence } else { 1.0 - confidence },
                        rationale: j.rationale,
                        dimensions: j.scores,
                        monitor: member.backend,
                        unavailable: false,
                    },
                });
            }
            Err(_) => excluded += 1,
        }
    }

    Ok(fold_report(member_verdicts, excluded, spec))
}

/// Deterministic fold from member verdicts to the report; separated so
/// metric properties can be tested on synthetic verdict vectors.
pub fn fold_report(
    member_verdicts: Vec<MemberVerdict>,
    excluded: usize,
    spec: &EnsembleSpec,
) -> DisagreementReport {
    let k = member_verdicts.len();
    if k < 2 {
        return DisagreementReport {
            member_verdicts,
            k_effective: k,
            excluded,
            disagreement: 0.0,
            entropy: 0.0,
            majority_category: ErrorCategory::None,
            majority_pass: true,
            systematic_flag: false,
            inconclusive: true,
        };
    }

    let passes = member_verdicts.iter().filter(|m| m.verdict.pass).count();
    let fails = k - passes;
    let pairs = k * (k - 1) / 2;
    let disagreement = (passes * fails) as f64 / pairs as f64;

    let mut counts: BTreeMap<ErrorCategory, usize> = BTreeMap::new();
    for m in &member_verdicts {
        *counts.entry(m.verdict.category).or_insert(0) += 1;
    }
    let entropy = normalized_entropy(&counts, k);

    let majority_category = majority(&counts);
    let majority_pass = majority_category == ErrorCategory::None;

    let systematic_flag = match &spec.execution_architecture {
        Some(exec_arch) => {
            let same: Vec<&MemberVerdict> = member_verdicts
                .iter()
                .filter(|m| &m.architecture == exec_arch)
                .collect();
            let cross: Vec<&MemberVerdict> = member_verdicts
                .iter()
                .filter(|m| &m.architecture != exec_arch)
                .collect();
            let same_all_pass = !same.is_empty() && same.iter().all(|m| m.verdict.pass);
            let cross_fails = cross.iter().filter(|m| !m.verdict.pass).count();
            // Majority of the cross-architecture side fails, ties included:
            // a split cross panel against a unanimous same-side pass is
            // exactly the shape a shared blind spot produces.
            let cross_majority_fails = !cross.is_empty() && 2 * cross_fails >= cross.len();
            same_all_pass && cross_majority_fails && cross_fails > 0
        }
        None => false,
    };

    DisagreementReport {
        member_verdicts,
        k_effective: k,
        excluded,
        disagreement,
        entropy,
        majority_category,
        majority_pass,
        systematic_flag,
        inconclusive: false,
    }
}

/// Shannon entropy of the category counts normalized by ln(m) over the
/// m distinct categories present. Unanimity short-circuits to 0.
fn normalized_entropy(counts: &BTreeMap<ErrorCategory, usize>, k: usize) -> f64 {
    let m = counts.len();
    if m <= 1 {
        return 0.0;
    }
    let h: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / k as f64;
            -p * p.ln()
        })
        .sum();
    h / (m as f64).ln()
}

/// Modal category with fail-wins tie-breaking: a failing category beats
/// `None` at equal count, and among failing categories the graver one
/// (systematic, then logic, format, content) takes the tie.
fn majority(counts: &BTreeMap<ErrorCategory, usize>) -> ErrorCategory {
    let severity = |c: ErrorCategory| match c {
        ErrorCategory::Systematic => 4,
        ErrorCategory::Logic => 3,
        ErrorCategory::Format => 2,
        ErrorCategory::Content => 1,
        ErrorCategory::None => 0,
    };
    counts
        .iter()
        .max_by(|(ca, na), (cb, nb)| {
            na.cmp(nb).then(severity(**ca).cmp(&severity(**cb)))
        })
        .map(|(c, _)| *c)
        .expect("counts non-empty")
}

/// Fold the report into an action. Blind-spot shape outranks everything;
/// otherwise a failing majority or a split at or past the disagreement
/// cutoff corrects, and a coherent pass is accepted. Entropy is reported
/// but never decides.
pub fn escalate_decision(report: &DisagreementReport, spec: &EnsembleSpec) -> Result<EscalationDecision> {
    if report.inconclusive {
        return Err(Error::EnsembleInconclusive(report.k_effective));
    }
    if report.systematic_flag {
        return Ok(EscalationDecision::FlagSystematic);
    }
    if !report.majority_pass || report.disagreement >= spec.disagreement_cutoff {
        return Ok(EscalationDecision::Correct);
    }
    Ok(EscalationDecision::Accept)
}
