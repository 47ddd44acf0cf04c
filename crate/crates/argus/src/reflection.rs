//! Bounded reflection: a rejected output is renegotiated with the monitor
//! instead of being thrown away.
//!
//! Each round the actor produces an output, the monitor accepts or returns
//! structured feedback (error type, diagnostic rationale, contextual trace),
//! and the next round's context composes the task with a sliding window of
//! the last `w` (output, feedback) pairs. The loop is bounded by `max_rounds`
//! and escalates on exhaustion. Context size is O(w) regardless of round
//! count, so long negotiations cannot grow the prompt without bound.

use serde::{Deserialize, Serialize};

use crate::backends::{AgentBackend, GenerateRequest, JudgeRequest, MonitorBackend};
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::monitor::{classify, DimensionCutoffs, ErrorCategory};
use crate::payload::Payload;
use crate::seed;

pub const DEFAULT_MAX_ROUNDS: u32 = 5;
pub const DEFAULT_WINDOW: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRef {
    /// Where the excerpt comes from: a round tag or a snapshot key.
    pub source: String,
    pub excerpt: String,
}

/// Monitor feedback for one rejected round. All three fields are required;
/// an empty rationale or trace would leave the actor guessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub error_type: ErrorCategory,
    pub diagnostic_rationale: String,
    pub contextual_trace: Vec<TraceRef>,
}

impl Feedback {
    pub fn new(
        error_type: ErrorCategory,
        diagnostic_rationale: impl Into<String>,
        contextual_trace: Vec<TraceRef>,
    ) -> Result<Feedback> {
        let diagnostic_rationale = diagnostic_rationale.into();
        if error_type == ErrorCategory::None {
            return Err(Error::Reflection("feedback requires a failing error type".into()));
        }
        if diagnostic_rationale.trim().is_empty() {
            return Err(Error::Reflection("feedback rationale must be non-empty".into()));
        }
        if contextual_trace.is_empty() {
            return Err(Error::Reflection("feedback trace must be non-empty".into()));
        }
        Ok(Feedback { error_type, diagnostic_rationale, contextual_trace })
    }
}

/// One negotiation round. Feedback is present exactly when the round was
/// rejected and a further round followed; the final rejected round carries
/// none because the loop escalates instead of composing more context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: u32,
    pub output: Payload,
    pub output_digest: String,
    pub accepted: bool,
    pub feedback: Option<Feedback>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "outcome")]
pub enum ReflectionOutcome {
    Accepted { round: u32 },
    Escalated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionTranscript {
    pub task: String,
    pub rounds: Vec<RoundState>,
    pub outcome: ReflectionOutcome,
    /// Window pair count per round, recorded so the O(w) bound is
    /// observable from the outside.
    pub context_pair_counts: Vec<usize>,
}

impl ReflectionTranscript {
    pub fn accepted_output(&self) -> Option<&Payload> {
        match self.outcome {
            ReflectionOutcome::Accepted { round } => self
                .rounds
                .iter()
                .find(|r| r.round == round)
                .map(|r| &r.output),
            ReflectionOutcome::Escalated => None,
        }
    }

    pub fn rounds_used(&self) -> u32 {
        self.rounds.len() as u32
    }
}

/// Sliding-window context: the task plus the last `min(t, w)` rejected
/// (output, feedback) pairs in round order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedContext {
    pub task: String,
    pub pairs: Vec<(Payload, Feedback)>,
}

impl ComposedContext {
    pub fn render(&self) -> String {
        let mut out = self.task.clone();
        for (output, feedback) in &self.pairs {
            out.push_str("\n\nPrior attempt:\n");
            out.push_str(&output.content);
            out.push_str(&format!(
                "\nFeedback ({}): {}",
                feedback.error_type, feedback.diagnostic_rationale
            ));
        }
        out
    }
}

pub fn compose_context(task: &str, rounds: &[RoundState], window: usize) -> ComposedContext {
    let pairs: Vec<(Payload, Feedback)> = rounds
        .iter()
        .filter_map(|r| r.feedback.as_ref().map(|f| (r.output.clone(), f.clone())))
        .collect();
    let start = pairs.len().saturating_sub(window);
    ComposedContext { task: task.to_string(), pairs: pairs[start..].to_vec() }
}

#[derive(Debug, Clone)]
pub struct ReflectionConfig {
    pub max_rounds: u32,
    pub window: usize,
    pub seed: u64,
    pub temperature: f64,
}

impl Default for ReflectionConfig {
    fn default() -> ReflectionConfig {
        ReflectionConfig {
            max_rounds: DEFAULT_MAX_ROUNDS,
            window: DEFAULT_WINDOW,
            seed: 0,
            temperature: 0.0,
        }
    }
}

/// Negotiate `task` between an actor and a monitor. Returns the transcript;
/// acceptance, escalation, and every intermediate round are all in it.
/// Monitor errors abort the negotiation: reflection without a reachable
/// monitor is meaningless.
pub async fn run_reflection(
    cfg: &ReflectionConfig,
    task: &str,
    input: &Payload,
    act: &dyn AgentBackend,
    monitor: &dyn MonitorBackend,
) -> Result<ReflectionTranscript> {
    if cfg.max_rounds == 0 {
        return Err(Error::Reflection("max_rounds must be >= 1".into()));
    }
    let cutoffs = DimensionCutoffs::default();
    let node = NodeId::new("reflect");
    let mut rounds: Vec<RoundState> = Vec::new();
    let mut context_pair_counts = Vec::new();
    let mut outcome = ReflectionOutcome::Escalated;

    for t in 1..=cfg.max_rounds {
        let context = compose_context(task, &rounds, cfg.window);
        context_pair_counts.push(context.pairs.len());

        let mut inputs = std::collections::BTreeMap::new();
        inputs.insert("input".to_string(), input.clone());
        let generated = act
            .generate(GenerateRequest {
                node: node.clone(),
                prompt: context.render(),
                inputs: inputs.clone(),
                seed: seed::derive(cfg.seed, &["reflect-round", &t.to_string()]),
                temperature: cfg.temperature,
                attempt: t - 1,
            })
            .await
            .map_err(|e| Error::Backend { backend: act.name().to_string(), message: e.to_string() })?;

        let judgment = monitor
            .judge(JudgeRequest {
                node: node.clone(),
                output: generated.payload.clone(),
                trace: generated.trace.clone(),
                context: inputs,
                seed: seed::derive(cfg.seed, &["reflect-judge", &t.to_string()]),
            })
            .await
            .map_err(|e| Error::Backend {
                backend: monitor.name().to_string(),
                message: e.to_string(),
            })?;

        let category = classify(&judgment.scores, &cutoffs, false);
        let accepted = category == ErrorCategory::None;
        let digest = generated.payload.digest();

        if accepted {
            rounds.push(RoundState {
                round: t,
                output: generated.payload,
                output_digest: digest,
                accepted: true,
                feedback: None,
            });
            outcome = ReflectionOutcome::Accepted { round: t };
            break;
        }

        let feedback = if t < cfg.max_rounds {
            Some(Feedback::new(
                category,
                judgment.rationale.clone(),
                vec![TraceRef {
                    source: format!("round-{t}"),
                    excerpt: generated.payload.content.chars().take(120).collect(),
                }],
            )?)
        } else {
            None
        };
        rounds.push(RoundState {
            round: t,
            output: generated.payload,
            output_digest: digest,
            accepted: false,
            feedback,
        });
    }

    Ok(ReflectionTranscript {
        task: task.to_string(),
        rounds,
        outcome,
        context_pair_counts,
    })
}

/// First pair of rounds with byte-identical outputs, if any: the signature
/// of an actor circling instead of moving.
pub fn detect_oscillation(transcript: &ReflectionTranscript) -> Option<(u32, u32)> {
    for (i, a) in transcript.rounds.iter().enumerate() {
        for b in &transcript.rounds[i + 1..] {
            if a.output_digest == b.output_digest {
                return Some((a.round, b.round));
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundAcceptance {
    pub round: u32,
    /// Negotiations that reached this round.
    pub trials: usize,
    pub accepts: usize,
    /// accepts / trials; the per-round acceptance probability estimate.
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStats {
    pub per_round: Vec<RoundAcceptance>,
    /// Cumulative fraction of negotiations terminated by each round.
    pub terminated_by_round: Vec<(u32, f64)>,
    pub escalation_rate: f64,
    pub max_rounds_observed: u32,
}

/// Pool transcripts into per-round acceptance estimates. A transcript
/// contributes a trial to round t when its negotiation reached t.
pub fn estimate_acceptance(transcripts: &[ReflectionTranscript]) -> ConvergenceStats {
    let total = transcripts.len();
    let max_round = transcripts
        .iter()
        .map(|t| t.rounds_used())
        .max()
        .unwrap_or(0);

    let mut per_round = Vec::new();
    for round in 1..=max_round {
        let trials = transcripts
            .iter()
            .filter(|t| t.rounds_used() >= round)
            .count();
        let accepts = transcripts
            .iter()
            .filter(|t| t.outcome == ReflectionOutcome::Accepted { round })
            .count();
        per_round.push(RoundAcceptance {
            round,
            trials,
            accepts,
            estimate: if trials == 0 { 0.0 } else { accepts as f64 / trials as f64 },
        });
    }

    let mut terminated_by_round = Vec::new();
    let mut terminated = 0usize;
    for round in 1..=max_round {
        terminated += transcripts
            .iter()
            .filter(|t| t.outcome == ReflectionOutcome::Accepted { round })
            .count();
        terminated_by_round.push((
            round,
            if total == 0 { 0.0 } else { terminated as f64 / total as f64 },
        ));
    }

    let escalated = transcripts
        .iter()
        .filter(|t| t.outcome == ReflectionOutcome::Escalated)
        .count();
    ConvergenceStats {
        per_round,
        terminated_by_round,
        escalation_rate: if total == 0 { 0.0 } else { escalated as f64 / total as f64 },
        max_rounds_observed: max_round,
    }
}

/// Analytic acceptance sequence for an improving actor: round t accepts
/// with probability min(initial + improvement * (t - 1), 1), frozen actors
/// stay at the initial rate.
pub fn analytic_acceptance(initial: f64, improvement: f64, frozen: bool, rounds: u32) -> Vec<f64> {
    (1..=rounds)
        .map(|t| {
            if frozen {
                initial
            } else {
                (initial + improvement * f64::from(t - 1)).min(1.0)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssumptionCheck {
    Holds,
    Violated,
    NotCheckable,
}

/// The three convergence prerequisites, checked against an inspectable
/// simulated actor. Opaque actors are `NotCheckable` across the board.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// A valid output exists at all.
    pub solution_exists: AssumptionCheck,
    /// Rejection strictly increases the next round's acceptance odds.
    pub feedback_improves: AssumptionCheck,
    /// The actor's output distribution covers some valid output.
    pub full_support: AssumptionCheck,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        [self.solution_exists, self.feedback_improves, self.full_support]
            .iter()
            .all(|c| *c == AssumptionCheck::Holds)
    }
}

pub fn check_assumptions(model: &crate::backends::sim::SimActModel) -> AssumptionReport {
    AssumptionReport {
        solution_exists: if model.valid_output_exists {
            AssumptionCheck::Holds
        } else {
            AssumptionCheck::Violated
        },
        feedback_improves: if !model.frozen && model.improvement > 0.0 {
            AssumptionCheck::Holds
        } else {
            AssumptionCheck::Violated
        },
        full_support: if model.support_includes_valid {
            AssumptionCheck::Holds
        } else {
            AssumptionCheck::Violated
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feedback(rationale: &str) -> Feedback {
        Feedback::new(
            ErrorCategory::Content,
            rationale,
            vec![TraceRef { source: "round-1".into(), excerpt: "x".into() }],
        )
        .unwrap()
    }

    fn rejected_round(round: u32, content: &str, with_feedback: bool) -> RoundState {
        let output = Payload::text(content);
        RoundState {
            round,
            output_digest: output.digest(),
            output,
            accepted: false,
            feedback: with_feedback.then(|| feedback(&format!("wrong at {round}"))),
        }
    }

    #[test]
    fn feedback_rejects_empty_fields() {
        assert!(Feedback::new(ErrorCategory::None, "r", vec![]).is_err());
        assert!(Feedback::new(ErrorCategory::Content, "  ", vec![]).is_err());
        assert!(Feedback::new(ErrorCategory::Content, "r", vec![]).is_err());
    }

    #[test]
    fn context_window_keeps_the_last_w_pairs() {
        let rounds: Vec<RoundState> = (1..=6)
            .map(|t| rejected_round(t, &format!("out-{t}"), true))
            .collect();
        let ctx = compose_context("task", &rounds, 4);
        assert_eq!(ctx.pairs.len(), 4);
        // Oldest two dropped; order preserved.
        assert_eq!(ctx.pairs[0].0.content, "out-3");
        assert_eq!(ctx.pairs[3].0.content, "out-6");
        assert_eq!(ctx.pairs[0].1.diagnostic_rationale, "wrong at 3");

        let small = compose_context("task", &rounds[..2], 4);
        assert_eq!(small.pairs.len(), 2);
    }

    #[test]
    fn render_contains_task_and_feedback() {
        let rounds = vec![rejected_round(1, "out-1", true)];
        let text = compose_context("solve it", &rounds, 4).render();
        assert!(text.starts_with("solve it"));
        assert!(text.contains("out-1"));
        assert!(text.contains("wrong at 1"));
    }

    #[test]
    fn oscillation_detects_duplicate_outputs() {
        let transcript = ReflectionTranscript {
            task: "t".into(),
            rounds: vec![
                rejected_round(1, "same", true),
                rejected_round(2, "other", true),
                rejected_round(3, "same", false),
            ],
            outcome: ReflectionOutcome::Escalated,
            context_pair_counts: vec![0, 1, 2],
        };
        assert_eq!(detect_oscillation(&transcript), Some((1, 3)));

        let clean = ReflectionTranscript {
            task: "t".into(),
            rounds: vec![rejected_round(1, "a", true), rejected_round(2, "b", false)],
            outcome: ReflectionOutcome::Escalated,
            context_pair_counts: vec![0, 1],
        };
        assert_eq!(detect_oscillation(&clean), None);
    }

    #[test]
    fn acceptance_estimates_pool_by_round_reached() {
        let accepted_at = |round: u32| {
            let mut rounds: Vec<RoundState> = (1..round)
                .map(|t| rejected_round(t, &format!("o{t}"), true))
                .collect();
            let output = Payload::text("good");
            rounds.push(RoundState {
                round,
                output_digest: output.digest(),
                output,
                accepted: true,
                feedback: None,
            });
            ReflectionTranscript {
                task: "t".into(),
                rounds,
                outcome: ReflectionOutcome::Accepted { round },
                context_pair_counts: vec![],
            }
        };
        // 2 accept at round 1, 1 accepts at round 2, 1 escalates after 2.
        let escalated = ReflectionTranscript {
            task: "t".into(),
            rounds: vec![rejected_round(1, "a", true), rejected_round(2, "b", false)],
            outcome: ReflectionOutcome::Escalated,
            context_pair_counts: vec![],
        };
        let stats = estimate_acceptance(&[
            accepted_at(1),
            accepted_at(1),
            accepted_at(2),
            escalated,
        ]);

        assert_eq!(stats.per_round[0].trials, 4);
        assert_eq!(stats.per_round[0].accepts, 2);
        assert!((stats.per_round[0].estimate - 0.5).abs() < 1e-12);
        assert_eq!(stats.per_round[1].trials, 2);
        assert!((stats.per_round[1].estimate - 0.5).abs() < 1e-12);
        assert_eq!(stats.terminated_by_round, vec![(1, 0.5), (2, 0.75)]);
        assert!((stats.escalation_rate - 0.25).abs() < 1e-12);
    }

    #[test]
    fn analytic_sequence_caps_at_one() {
        let seq = analytic_acceptance(0.2, 0.1, false, 10);
        assert!((seq[0] - 0.2).abs() < 1e-12);
        assert!((seq[8] - 1.0).abs() < 1e-12);
        assert!((seq[9] - 1.0).abs() < 1e-12);
        let frozen = analytic_acceptance(0.2, 0.1, true, 3);
        assert!(frozen.iter().all(|p| (*p - 0.2).abs() < 1e-12));
    }
}
