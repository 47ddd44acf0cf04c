//! Randomized invariants over the run records, the degradation bound, the
//! ensemble metrics, and the reflection window. Six families, callable
//! with any case count so both the property target and the acceptance
//! gate can run them.

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use argus::backends::sim::{
    mul_chain_spec, NodeErrorModel, OracleJudge, PerturbationKind, SimAgent, Truth,
};
use argus::backends::BackendRegistry;
use argus::ensemble::{fold_report, EnsembleSpec, MemberSpec, MemberVerdict};
use argus::executor::{run_workflow, ExecutionRecord, RunConfig};
use argus::graph::{linear_chain, Activation, MonitorMode, MonitorSpec, NodeId};
use argus::monitor::{DimensionScores, ErrorCategory, Verdict};
use argus::payload::Payload;
use argus::reflection::{compose_context, Feedback, RoundState, TraceRef};

fn runner(cases: u32) -> TestRunner {
    // Failures reproduce from the reported minimal case; no regression
    // files needed.
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn run_chain(
    n: usize,
    errors: BTreeMap<NodeId, NodeErrorModel>,
    max_corrections: u32,
    seed: u64,
) -> ExecutionRecord {
    let monitor = MonitorSpec {
        backend: "oracle".to_string(),
        threshold: 0.7,
        max_corrections,
        mode: MonitorMode::Single,
        activation: Activation::Always,
    };
    let graph = linear_chain(n, "sim", Some(monitor));
    let spec = mul_chain_spec(&graph, 2.0, 1.0);
    let truth = spec.ground_truth(&graph).unwrap();
    let mut registry = BackendRegistry::new();
    let mut agent = SimAgent::new("sim", spec);
    if !errors.is_empty() {
        agent = agent.with_errors(errors);
    }
    registry.register_agent(Arc::new(agent));
    registry.register_monitor(Arc::new(OracleJudge::new(
        "oracle",
        "reference",
        Truth::PerNode(truth),
    )));
    let cfg = RunConfig::new("prop", seed, Payload::with_value("value: 1", 1.0));
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap();
    rt.block_on(run_workflow(Arc::new(graph), Arc::new(registry), &cfg)).unwrap()
}

fn error_model_strategy() -> impl Strategy<Value = NodeErrorModel> {
    (
        0.0f64..=1.0,
        0.2f64..=0.8,
        prop_oneof![
            Just(PerturbationKind::ValueScale),
            Just(PerturbationKind::DigitFlip),
            Just(PerturbationKind::FormatCorrupt),
        ],
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(probability, magnitude, kind, signed, transient)| NodeErrorModel {
            probability,
            magnitude,
            kind,
            signed,
            only_attempts: if transient { Some([0].into_iter().collect()) } else { None },
        })
}

fn errors_strategy(n: usize) -> impl Strategy<Value = BTreeMap<NodeId, NodeErrorModel>> {
    prop::collection::vec(prop::option::of(error_model_strategy()), n).prop_map(move |models| {
        models
            .into_iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|m| (NodeId::new(format!("n{i:02}")), m)))
            .collect()
    })
}

/// Family 1: structural invariants of every execution record.
pub fn record_structure_invariants(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&(2usize..=4, any::<u64>(), errors_strategy(4)), |(n, seed, errors)| {
            let record = run_chain(n, errors, 2, seed);

            // One completion per node, no more, each within the final epoch.
            prop_assert_eq!(record.completions.len(), n);
            for c in &record.completions {
                prop_assert!(c.epoch <= record.final_epoch);
            }
            let mut nodes: Vec<_> = record.completions.iter().map(|c| c.node.clone()).collect();
            nodes.sort();
            nodes.dedup();
            prop_assert_eq!(nodes.len(), n);

            // Every correction bumped the epoch exactly once; the restore
            // path may add bumps on top, never remove them.
            prop_assert_eq!(record.rollbacks, record.final_epoch.0);
            prop_assert!(record.rollbacks >= record.corrections.len() as u64);

            // Correction epochs strictly increase: they serialize through
            // the single rollback path.
            for w in record.corrections.windows(2) {
                prop_assert!(w[0].epoch < w[1].epoch);
            }

            // The budget binds per node.
            let mut per_node: BTreeMap<&NodeId, usize> = BTreeMap::new();
            for c in &record.corrections {
                *per_node.entry(&c.node).or_insert(0) += 1;
            }
            for (_, k) in per_node {
                prop_assert!(k <= 2);
            }

            // Attempt bookkeeping: without degradation, the committed
            // attempt is the last one.
            if !record.degraded {
                for c in &record.completions {
                    prop_assert_eq!(c.attempt + 1, record.node_attempts[&c.node]);
                }
            }
            let total: u64 = record.node_attempts.values().map(|&a| u64::from(a)).sum();
            prop_assert_eq!(total, record.attempts_total);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Family 2: a run is a pure function of its configuration.
pub fn same_seed_replays_identically(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&(2usize..=4, any::<u64>(), errors_strategy(4)), |(n, seed, errors)| {
            let a = run_chain(n, errors.clone(), 2, seed);
            let b = run_chain(n, errors, 2, seed);
            prop_assert_eq!(a.replay_view(), b.replay_view());
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Family 3: transient errors under monitoring never survive to the final
/// output.
pub fn transient_errors_are_fully_corrected(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(
            &(2usize..=5, any::<u64>(), prop::collection::vec(0.0f64..=1.0, 5)),
            |(n, seed, probs)| {
                let errors: BTreeMap<NodeId, NodeErrorModel> = probs
                    .iter()
                    .take(n)
                    .enumerate()
                    .map(|(i, &p)| {
                        (
                            NodeId::new(format!("n{i:02}")),
                            NodeErrorModel {
                                probability: p,
                                ..NodeErrorModel::always(PerturbationKind::ValueScale, 0.5)
                                    .first_attempt_only()
                            },
                        )
                    })
                    .collect();
                let record = run_chain(n, errors, 3, seed);

                prop_assert!(!record.degraded);
                let expected = 2.0f64.powi(n as i32);
                prop_assert_eq!(record.final_output.value(), Some(expected));
                // A first-attempt-only error needs at most one correction
                // per node, even when ancestor rollbacks re-run the node at
                // attempt zero.
                let mut per_node: BTreeMap<&NodeId, usize> = BTreeMap::new();
                for c in &record.corrections {
                    *per_node.entry(&c.node).or_insert(0) += 1;
                }
                for (_, k) in per_node {
                    prop_assert!(k <= 1);
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

/// Family 4: the multiplicative degradation bound behaves like one.
pub fn degradation_bound_algebra(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(
            &(
                prop::collection::vec(0.0f64..=0.5, 0..10),
                0.0f64..=0.5,
                any::<prop::sample::Index>(),
            ),
            |(mut eps, extra, split)| {
                let bound = argus::suites::error_bound(&eps);
                prop_assert!(bound >= 1.0);

                // Monotone: one more stage never shrinks it.
                let mut grown = eps.clone();
                grown.push(extra);
                prop_assert!(argus::suites::error_bound(&grown) >= bound - 1e-12);

                // Permutation invariant up to float reassociation.
                eps.reverse();
                let reversed = argus::suites::error_bound(&eps);
                prop_assert!((reversed - bound).abs() <= 1e-9 * bound.max(1.0));

                // Composes multiplicatively over concatenation.
                if !eps.is_empty() {
                    let cut = split.index(eps.len());
                    let (a, b) = eps.split_at(cut);
                    let product = argus::suites::error_bound(a) * argus::suites::error_bound(b);
                    prop_assert!((product - reversed).abs() <= 1e-9 * reversed.max(1.0));
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

/// Family 5: ensemble disagreement metrics are pure functions of the vote
/// counts.
pub fn ensemble_metrics_are_count_based(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(
            &(
                prop::collection::vec((any::<bool>(), 0u8..3, any::<bool>()), 2..=7),
                any::<prop::sample::Index>(),
            ),
            |(votes, rotation)| {
                let verdict = |pass: bool, cat: u8| {
                    let category = if pass {
                        ErrorCategory::None
                    } else {
                        match cat {
                            0 => ErrorCategory::Logic,
                            1 => ErrorCategory::Format,
                            _ => ErrorCategory::Content,
                        }
                    };
                    Verdict {
                        pass,
                        category,
                        confidence: if pass { 1.0 } else { 0.8 },
                        rationale: "synthetic".to_string(),
                        dimensions: if pass {
                            DimensionScores::perfect()
                        } else {
                            DimensionScores::new(1.0, 1.0, 0.0).unwrap()
                        },
                        monitor: "m".to_string(),
                        unavailable: false,
                    }
                };
                let members: Vec<MemberVerdict> = votes
                    .iter()
                    .enumerate()
                    .map(|(i, &(pass, cat, arch))| MemberVerdict {
                        member: format!("m{i}"),
                        architecture: if arch { "alpha" } else { "beta" }.to_string(),
                        verdict: verdict(pass, cat),
                    })
                    .collect();
                let spec = EnsembleSpec {
                    members: vec![
                        MemberSpec { backend: "a".into(), architecture: "alpha".into() },
                        MemberSpec { backend: "b".into(), architecture: "beta".into() },
                    ],
                    execution_architecture: Some("alpha".to_string()),
                    disagreement_cutoff: 0.5,
                    entropy_note: 0.75,
                };

                let k = members.len();
                let base = fold_report(members.clone(), 0, &spec);

                // Bounds.
                prop_assert!((0.0..=1.0).contains(&base.disagreement));
                prop_assert!(base.entropy >= 0.0 && base.entropy <= 1.0 + 1e-12);
                // The pass tally pins the disagreement exactly.
                let passes = votes.iter().filter(|v| v.0).count();
                let expected_d = (passes * (k - passes)) as f64 / (k * (k - 1) / 2) as f64;
                prop_assert!((base.disagreement - expected_d).abs() <= 1e-12);

                // Invariance under rotation and reversal.
                let mut rotated = members.clone();
                rotated.rotate_left(rotation.index(k));
                let mut reversed = members;
                reversed.reverse();
                for variant in [fold_report(rotated, 0, &spec), fold_report(reversed, 0, &spec)] {
                    prop_assert_eq!(variant.disagreement, base.disagreement);
                    prop_assert_eq!(variant.entropy, base.entropy);
                    prop_assert_eq!(variant.majority_pass, base.majority_pass);
                    prop_assert_eq!(variant.majority_category, base.majority_category);
                    prop_assert_eq!(variant.systematic_flag, base.systematic_flag);
                }

                // Majority coherence: a passing majority verdict is exactly
                // a `None` majority category.
                prop_assert_eq!(base.majority_pass, base.majority_category == ErrorCategory::None);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

/// Family 6: the reflection window keeps the last w feedback-bearing
/// rounds, in order.
pub fn reflection_window_keeps_the_recent_tail(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(
            &(prop::collection::vec(any::<bool>(), 0..=10), 1usize..=6),
            |(flags, window)| {
                let rounds: Vec<RoundState> = flags
                    .iter()
                    .enumerate()
                    .map(|(i, &has_feedback)| {
                        let output = Payload::text(format!("draft {i}"));
                        let feedback = has_feedback.then(|| {
                            Feedback::new(
                                ErrorCategory::Content,
                                format!("round {i} missed the point"),
                                vec![TraceRef {
                                    source: format!("r{i}"),
                                    excerpt: "…".to_string(),
                                }],
                            )
                            .unwrap()
                        });
                        RoundState {
                            round: i as u32 + 1,
                            output_digest: output.digest(),
                            output,
                            accepted: false,
                            feedback,
                        }
                    })
                    .collect();

                let composed = compose_context("task", &rounds, window);
                let with_feedback: Vec<usize> = flags
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &f)| f.then_some(i))
                    .collect();
                let expect: Vec<usize> = with_feedback
                    .iter()
                    .skip(with_feedback.len().saturating_sub(window))
                    .copied()
                    .collect();

                prop_assert_eq!(composed.pairs.len(), expect.len());
                for (pair, &i) in composed.pairs.iter().zip(&expect) {
                    let marker = format!("round {i}");
                    prop_assert_eq!(pair.0.content.clone(), format!("draft {i}"));
                    prop_assert!(pair.1.diagnostic_rationale.contains(&marker));
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}
