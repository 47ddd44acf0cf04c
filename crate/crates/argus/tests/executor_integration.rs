//! End-to-end runs exercising the monitor modes, activation gating, chaos
//! injection, disk persistence, and degraded-commit restoration.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;

use argus::backends::chaos::{ChaosMonitor, ChaosSpec};
use argus::backends::sim::{
    mul_chain_spec, BiasedJudge, NodeErrorModel, OracleJudge, PerturbationKind, SimAgent, Truth,
};
use argus::backends::{
    AgentBackend, BackendError, BackendRegistry, GenerateRequest, GenerateResponse, Judgment,
    JudgeRequest, MonitorBackend,
};
use argus::ensemble::{EnsembleSpec, MemberSpec};
use argus::executor::{run_workflow, Executor, RunConfig};
use argus::graph::{linear_chain, Activation, MonitorMode, MonitorSpec, NodeId, WorkflowGraph};
use argus::monitor::{AggregationRule, DimensionScores, ErrorCategory};
use argus::payload::Payload;
use argus::snapshot::SnapshotKey;
use argus::store::SnapshotStore;

fn monitor_spec(backend: &str) -> MonitorSpec {
    MonitorSpec {
        backend: backend.to_string(),
        threshold: 0.7,
        max_corrections: 3,
        mode: MonitorMode::Single,
        activation: Activation::Always,
    }
}

fn doubling_chain(
    n: usize,
    errors: BTreeMap<NodeId, NodeErrorModel>,
    monitor: Option<MonitorSpec>,
) -> (Arc<WorkflowGraph>, Arc<BackendRegistry>) {
    let graph = linear_chain(n, "sim", monitor);
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
    (Arc::new(graph), Arc::new(registry))
}

fn first_attempt_error(node: &str) -> BTreeMap<NodeId, NodeErrorModel> {
    BTreeMap::from([(
        NodeId::new(node),
        NodeErrorModel::always(PerturbationKind::ValueScale, 0.5).first_attempt_only(),
    )])
}

#[tokio::test]
async fn hcv_panel_flags_the_blind_spot_and_corrects() {
    // Two members share the executing architecture and trust the trace;
    // the third genuinely checks content. A consistent first-attempt value
    // error is exactly the shape only the odd one out can see.
    let mspec = MonitorSpec {
        backend: "panel".to_string(),
        threshold: 0.7,
        max_corrections: 3,
        mode: MonitorMode::Hcv,
        activation: Activation::Always,
    };
    let graph = linear_chain(3, "sim", Some(mspec));
    let task = mul_chain_spec(&graph, 2.0, 1.0);
    let truth = task.ground_truth(&graph).unwrap();

    let mut registry = BackendRegistry::new();
    registry.register_agent(Arc::new(
        SimAgent::new("sim", task).with_errors(first_attempt_error("n01")),
    ));
    registry.register_monitor(Arc::new(BiasedJudge::new(OracleJudge::new(
        "peer-a",
        "alpha",
        Truth::PerNode(truth.clone()),
    ))));
    registry.register_monitor(Arc::new(BiasedJudge::new(OracleJudge::new(
        "peer-b",
        "alpha",
        Truth::PerNode(truth.clone()),
    ))));
    registry.register_monitor(Arc::new(OracleJudge::new(
        "outsider",
        "beta",
        Truth::PerNode(truth),
    )));
    registry.register_ensemble(
        "panel",
        EnsembleSpec {
            members: vec![
                MemberSpec { backend: "peer-a".into(), architecture: "alpha".into() },
                MemberSpec { backend: "peer-b".into(), architecture: "alpha".into() },
                MemberSpec { backend: "outsider".into(), architecture: "beta".into() },
            ],
            execution_architecture: Some("alpha".to_string()),
            disagreement_cutoff: 0.5,
            entropy_note: 0.75,
        },
    );

    let cfg = RunConfig::new("hcv", 11, Payload::with_value("value: 1", 1.0));
    let record = run_workflow(Arc::new(graph), Arc::new(registry), &cfg).await.unwrap();

    assert_eq!(record.final_output.value(), Some(8.0));
    assert!(!record.degraded);
    assert!(record.rollbacks >= 1);
    let on_n01: Vec<_> = record
        .corrections
        .iter()
        .filter(|c| c.node == NodeId::new("n01"))
        .collect();
    assert_eq!(on_n01.len(), 1);
    // The same-architecture majority passed while the outsider failed:
    // that shape is reported as systematic, not as a plain content miss.
    assert!(on_n01[0].systematic);
    assert_eq!(on_n01[0].category, ErrorCategory::Systematic);
}

#[tokio::test]
async fn reflect_mode_feeds_failure_history_into_the_retry_prompt() {
    let mspec = MonitorSpec {
        backend: "oracle".to_string(),
        threshold: 0.7,
        max_corrections: 3,
        mode: MonitorMode::Reflect,
        activation: Activation::Always,
    };
    let graph = linear_chain(2, "sim", Some(mspec));
    let task = mul_chain_spec(&graph, 2.0, 1.0);
    let truth = task.ground_truth(&graph).unwrap();

    let errors = BTreeMap::from([(
        NodeId::new("n00"),
        NodeErrorModel {
            only_attempts: Some([0u32, 1].into_iter().collect()),
            ..NodeErrorModel::always(PerturbationKind::ValueScale, 0.5)
        },
    )]);
    let mut registry = BackendRegistry::new();
    registry.register_agent(Arc::new(SimAgent::new("sim", task).with_errors(errors)));
    registry.register_monitor(Arc::new(OracleJudge::new(
        "oracle",
        "reference",
        Truth::PerNode(truth),
    )));

    let store = Arc::new(SnapshotStore::in_memory());
    let executor = Executor::new(Arc::new(graph), Arc::new(registry), store.clone());
    let cfg = RunConfig::new("reflect", 5, Payload::with_value("value: 1", 1.0));
    let record = executor.run(&cfg).await.unwrap();

    assert_eq!(record.final_output.value(), Some(4.0));
    let n00_corrections: Vec<_> = record
        .corrections
        .iter()
        .filter(|c| c.node == NodeId::new("n00"))
        .collect();
    assert_eq!(n00_corrections.len(), 2);

    // The second retry's prompt carries the composed window of earlier
    // failed attempts, not just the generic correction preamble.
    let final_key = record.completions.iter().find(|c| c.node == NodeId::new("n00")).unwrap();
    let snapshot = store
        .get(&SnapshotKey::new(final_key.node.clone(), final_key.epoch, final_key.attempt))
        .unwrap();
    let last_prompt = snapshot.prompt_history.last().unwrap();
    assert!(last_prompt.contains("Earlier attempts and feedback:"), "{last_prompt}");
    assert!(last_prompt.contains("Prior attempt:"), "{last_prompt}");
    // Both failed outputs appear in the window.
    assert!(last_prompt.matches("Prior attempt:").count() >= 2, "{last_prompt}");
}

#[tokio::test]
async fn monitor_outage_fails_open_and_is_booked_as_debt() {
    // The chaos wrapper registers itself under "chaos:" + inner name.
    let graph = linear_chain(3, "sim", Some(monitor_spec("chaos:oracle")));
    let task = mul_chain_spec(&graph, 2.0, 1.0);
    let truth = task.ground_truth(&graph).unwrap();

    let mut registry = BackendRegistry::new();
    registry.register_agent(Arc::new(SimAgent::new("sim", task)));
    registry.register_monitor(Arc::new(ChaosMonitor::new(
        Arc::new(OracleJudge::new("oracle", "reference", Truth::PerNode(truth))),
        ChaosSpec::failing(1.0),
    )));

    let cfg = RunConfig::new("outage", 3, Payload::with_value("value: 1", 1.0));
    let record = run_workflow(Arc::new(graph), Arc::new(registry), &cfg).await.unwrap();

    // Generation is never blocked by a dead monitor; the run completes
    // with the assessment debt on the books instead.
    assert_eq!(record.final_output.value(), Some(8.0));
    assert_eq!(record.rollbacks, 0);
    assert!(record.corrections.is_empty());
    assert_eq!(record.debt.unavailable_verdicts, 3);
}

#[tokio::test]
async fn low_upstream_confidence_gate_skips_assessment_after_clean_parents() {
    // Parent is monitored and clean, so its verdict confidence is 1.0 and
    // the child's conditional monitor must stay quiet.
    let gated = MonitorSpec {
        backend: "oracle".to_string(),
        threshold: 0.7,
        max_corrections: 3,
        mode: MonitorMode::Single,
        activation: Activation::OnLowUpstreamConfidence { cutoff: 0.5 },
    };
    let mut graph = linear_chain(2, "sim", Some(monitor_spec("oracle")));
    graph.node_mut(&NodeId::new("n01")).unwrap().monitor = Some(gated.clone());
    let task = mul_chain_spec(&graph, 2.0, 1.0);
    let truth = task.ground_truth(&graph).unwrap();
    let mut registry = BackendRegistry::new();
    registry.register_agent(Arc::new(SimAgent::new("sim", task)));
    registry.register_monitor(Arc::new(OracleJudge::new(
        "oracle",
        "reference",
        Truth::PerNode(truth.clone()),
    )));

    let store = Arc::new(SnapshotStore::in_memory());
    let executor = Executor::new(Arc::new(graph), Arc::new(registry), store.clone());
    let cfg = RunConfig::new("gated", 9, Payload::with_value("value: 1", 1.0));
    let record = executor.run(&cfg).await.unwrap();
    assert_eq!(record.final_output.value(), Some(4.0));

    let diag_count = |node: &str| {
        let c = record.completions.iter().find(|c| c.node == NodeId::new(node)).unwrap();
        store
            .get(&SnapshotKey::new(c.node.clone(), c.epoch, c.attempt))
            .unwrap()
            .diagnostics
            .len()
    };
    assert_eq!(diag_count("n00"), 1);
    assert_eq!(diag_count("n01"), 0);

    // Same wiring without the parent's monitor: no upstream verdict means
    // low confidence by definition, and the gate opens.
    let mut graph = linear_chain(2, "sim", None);
    graph.node_mut(&NodeId::new("n01")).unwrap().monitor = Some(gated);
    let task = mul_chain_spec(&graph, 2.0, 1.0);
    let mut registry = BackendRegistry::new();
    registry.register_agent(Arc::new(SimAgent::new("sim", task)));
    registry.register_monitor(Arc::new(OracleJudge::new(
        "oracle",
        "reference",
        Truth::PerNode(truth),
    )));
    let store = Arc::new(SnapshotStore::in_memory());
    let executor = Executor::new(Arc::new(graph), Arc::new(registry), store.clone());
    let record = executor.run(&cfg).await.unwrap();
    let c = record.completions.iter().find(|c| c.node == NodeId::new("n01")).unwrap();
    let diags = store
        .get(&SnapshotKey::new(c.node.clone(), c.epoch, c.attempt))
        .unwrap()
        .diagnostics;
    assert_eq!(diags.len(), 1);
}

#[tokio::test]
async fn disk_backed_run_persists_snapshots_across_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let (graph, registry) = doubling_chain(3, first_attempt_error("n00"), Some(monitor_spec("oracle")));
    let store = Arc::new(SnapshotStore::open(dir.path()).unwrap());
    let executor = Executor::new(graph, registry, store.clone());
    let cfg = RunConfig::new("disk", 21, Payload::with_value("value: 1", 1.0));
    let record = executor.run(&cfg).await.unwrap();

    assert_eq!(record.final_output.value(), Some(8.0));
    assert_eq!(record.corrections.len(), 1);
    assert!(store.log_bytes().unwrap() > 0);

    let reopened = SnapshotStore::open(dir.path()).unwrap();
    assert_eq!(reopened.len(), store.len());
    for key in store.keys() {
        assert_eq!(reopened.get(&key).unwrap(), store.get(&key).unwrap());
    }
}

/// Attempt 0 emits value 5 with an internally consistent story; later
/// attempts emit value 6 with a contradictory one.
struct BackslidingAgent {
    calls: AtomicU64,
}

#[async_trait]
impl AgentBackend for BackslidingAgent {
    fn name(&self) -> &str {
        "backslider"
    }

    async fn generate(&self, req: GenerateRequest) -> Result<GenerateResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let v = if req.attempt == 0 { 5.0 } else { 6.0 };
        Ok(GenerateResponse {
            payload: Payload::with_value(format!("value: {v}"), v),
            trace: format!("attempt {}: emit {v}", req.attempt),
            simulated_nanos: None,
        })
    }
}

/// Value 5: right shape, wrong content (logic and format hold up). Value 6:
/// wrong and incoherent (logic gone too). Anything else passes.
struct ShapeJudge;

#[async_trait]
impl MonitorBackend for ShapeJudge {
    fn name(&self) -> &str {
        "shape"
    }

    fn architecture(&self) -> &str {
        "reference"
    }

    async fn judge(&self, req: JudgeRequest) -> Result<Judgment, BackendError> {
        let scores = match req.output.value() {
            Some(v) if v == 5.0 => DimensionScores::new(1.0, 1.0, 0.0).unwrap(),
            Some(v) if v == 6.0 => DimensionScores::new(0.0, 1.0, 0.0).unwrap(),
            _ => DimensionScores::perfect(),
        };
        Ok(Judgment { scores, rationale: "shape check".to_string() })
    }
}

#[tokio::test]
async fn give_up_restores_the_strongest_earlier_attempt() {
    let mut graph = WorkflowGraph::new();
    let mut node = argus::graph::NodeSpec::new("only", "backslider", "{input}");
    // Under the 1/3-weighted mean, the coherent failure carries verdict
    // confidence 1/3 and the incoherent one 2/3; the acting threshold has
    // to sit below both or the failures would be ignored as hunches.
    node.monitor = Some(MonitorSpec { threshold: 0.25, ..monitor_spec("shape") });
    graph.add_node(node);

    let mut registry = BackendRegistry::new();
    registry.register_agent(Arc::new(BackslidingAgent { calls: AtomicU64::new(0) }));
    registry.register_monitor(Arc::new(ShapeJudge));

    let mut cfg = RunConfig::new("restore", 1, Payload::text("go"));
    // Weighted aggregation separates the two failure shapes: quality 2/3
    // for the coherent wrong answer, 1/3 for the incoherent one.
    cfg.aggregation = AggregationRule::WeightedMean {
        logic: 1.0 / 3.0,
        format: 1.0 / 3.0,
        content: 1.0 / 3.0,
    };

    let store = Arc::new(SnapshotStore::in_memory());
    let executor = Executor::new(Arc::new(graph), Arc::new(registry), store.clone());
    let record = executor.run(&cfg).await.unwrap();

    // R = 3 corrections burned, then the give-up path resurrects the
    // attempt-0 commit because its verdict quality was highest.
    assert!(record.degraded);
    assert_eq!(record.corrections.len(), 3);
    assert_eq!(record.node_attempts[&NodeId::new("only")], 4);
    assert_eq!(record.final_output.value(), Some(5.0));
    // Three correction bumps plus the restore bump.
    assert_eq!(record.rollbacks, 4);
    assert_eq!(record.final_epoch.0, 4);
    let c = record.completions.iter().find(|c| c.node == NodeId::new("only")).unwrap();
    assert_eq!(c.attempt, 0);
}
