//! Deterministic simulation backends: an arithmetic task family with
//! seeded fault injection, plus judges that range from exact oracles to
//! deliberately blind ones.
//!
//! The task family is small on purpose. Every node applies one arithmetic
//! op to the sum of its parents, so ground truth is a pure graph fold and
//! every judge can be checked against it exactly. Perturbations are keyed
//! to the dimension they should trip: a scaled value stays self-consistent
//! (content error), a flipped output contradicts its own trace (logic
//! error), a mangled rendering keeps the true structured value (format
//! error), and an omission produces nothing (content error).

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{
    AgentBackend, BackendError, GenerateRequest, GenerateResponse, JudgeRequest, Judgment,
    MonitorBackend,
};
use crate::graph::{NodeId, WorkflowGraph};
use crate::monitor::DimensionScores;
use crate::payload::Payload;
use crate::seed;

pub const VALUE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "op", content = "arg")]
pub enum ArithOp {
    Add(f64),
    Mul(f64),
}

impl ArithOp {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            ArithOp::Add(c) => x + c,
            ArithOp::Mul(c) => x * c,
        }
    }
}

/// The concrete task instance: one op per node plus the scalar fed to
/// source nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTaskSpec {
    pub ops: BTreeMap<NodeId, ArithOp>,
    pub input: f64,
}

impl SimTaskSpec {
    /// Pure evaluation of the whole graph; the reference every judge and
    /// suite measures against.
    pub fn ground_truth(&self, graph: &WorkflowGraph) -> crate::Result<BTreeMap<NodeId, f64>> {
        let order = graph.schedule()?;
        let mut truth: BTreeMap<NodeId, f64> = BTreeMap::new();
        for node in order {
            let op = self.ops.get(&node).ok_or_else(|| {
                crate::Error::Config(format!("no op for node {}", node.0))
            })?;
            let parents = graph.parents(&node);
            let fed: f64 = if parents.is_empty() {
                self.input
            } else {
                parents.iter().map(|p| truth[p]).sum()
            };
            truth.insert(node, op.apply(fed));
        }
        Ok(truth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    /// Output and trace both scaled: wrong but self-consistent.
    ValueScale,
    /// Output perturbed while the trace still claims the true value.
    DigitFlip,
    /// Rendering mangled; the structured value stays correct.
    FormatCorrupt,
    /// Nothing produced at all.
    Omission,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeErrorModel {
    pub probability: f64,
    /// Relative perturbation size for value-affecting kinds.
    pub magnitude: f64,
    pub kind: PerturbationKind,
    /// Random sign on the perturbation; false always pushes upward.
    #[serde(default)]
    pub signed: bool,
    /// Restrict injection to these attempt indices. `None` fires on any
    /// attempt; `Some({0})` makes every error correctable by retry.
    #[serde(default)]
    pub only_attempts: Option<BTreeSet<u32>>,
}

impl NodeErrorModel {
    pub fn always(kind: PerturbationKind, magnitude: f64) -> NodeErrorModel {
        NodeErrorModel {
            probability: 1.0,
            magnitude,
            kind,
            signed: false,
            only_attempts: None,
        }
    }

    pub fn first_attempt_only(mut self) -> NodeErrorModel {
        self.only_attempts = Some(BTreeSet::from([0]));
        self
    }
}

pub fn parse_value(payload: &Payload) -> Option<f64> {
    payload.value().or_else(|| {
        payload
            .content
            .strip_prefix("value: ")
            .and_then(|rest| rest.trim().parse().ok())
    })
}

fn rel_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= VALUE_TOLERANCE * b.abs().max(1.0)
}

/// Simulated worker. Computes its node's true value from the inputs it was
/// handed, then optionally corrupts the result per its error model. All
/// randomness derives from the request seed and temperature, so a run is
/// a pure function of its configuration.
#[derive(Debug, Clone)]
pub struct SimAgent {
    pub name: String,
    pub spec: SimTaskSpec,
    pub errors: BTreeMap<NodeId, NodeErrorModel>,
    pub delay: Duration,
}

impl SimAgent {
    pub fn new(name: impl Into<String>, spec: SimTaskSpec) -> SimAgent {
        SimAgent {
            name: name.into(),
            spec,
            errors: BTreeMap::new(),
            delay: Duration::ZERO,
        }
    }

    pub fn with_errors(mut self, errors: BTreeMap<NodeId, NodeErrorModel>) -> SimAgent {
        self.errors = errors;
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> SimAgent {
        self.delay = delay;
        self
    }
}

#[async_trait]
impl AgentBackend for SimAgent {
    fn name(&self) -> &str {
        &self.name
    }

    async fn generate(&self, req: GenerateRequest) -> Result<GenerateResponse, BackendError> {
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        let op = self.spec.ops.get(&req.node).ok_or_else(|| {
            BackendError::Config(format!("sim agent has no op for node {}", req.node.0))
        })?;

        let fed: f64 = if req.inputs.is_empty() {
            self.spec.input
        } else {
            let mut sum = 0.0;
            for (name, payload) in &req.inputs {
                sum += parse_value(payload).ok_or_else(|| {
                    BackendError::Malformed(format!(
                        "input {name} for node {} carries no numeric value",
                        req.node.0
                    ))
                })?;
            }
            sum
        };
        let truth = op.apply(fed);

        // Temperature participates in the stream tag so perturbed retries
        // actually see different draws.
        let mut rng = seed::rng(
            req.seed,
            &["sim-gen", &req.temperature.to_bits().to_string()],
        );

        let fires = self.errors.get(&req.node).is_some_and(|model| {
            let attempt_ok = model
                .only_attempts
                .as_ref()
                .is_none_or(|set| set.contains(&req.attempt));
            attempt_ok && rng.gen::<f64>() < model.probability
        });

        if !fires {
            let payload = Payload::with_value(format!("value: {truth}"), truth);
            return Ok(GenerateResponse {
                payload,
                trace: format!("compute {}: sum {fed} -> {truth}", req.node.0),
                simulated_nanos: Some(self.delay.as_nanos() as u64),
            });
        }

        let model = &self.errors[&req.node];
        let sign = if model.signed && rng.gen::<bool>() { -1.0 } else { 1.0 };
        let wrong = truth * (1.0 + sign * model.magnitude);
        let (payload, trace) = match model.kind {
            PerturbationKind::ValueScale => (
                Payload::with_value(format!("value: {wrong}"), wrong),
                format!("compute {}: sum {fed} -> {wrong}", req.node.0),
            ),
            PerturbationKind::DigitFlip => (
                Payload::with_value(format!("value: {wrong}"), wrong),
                format!("compute {}: sum {fed} -> {truth}", req.node.0),
            ),
            PerturbationKind::FormatCorrupt => (
                Payload::with_value(format!("val={truth}!!"), truth),
                format!("compute {}: sum {fed} -> {truth}", req.node.0),
            ),
            PerturbationKind::Omission => (
                Payload::text(""),
                format!("compute {}: omitted", req.node.0),
            ),
        };
        Ok(GenerateResponse { payload, trace, simulated_nanos: Some(self.delay.as_nanos() as u64) })
    }
}

/// What the oracle judge treats as correct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truth {
    PerNode(BTreeMap<NodeId, f64>),
    Fixed(f64),
}

impl Truth {
    fn expected(&self, node: &NodeId) -> Option<f64> {
        match self {
            Truth::PerNode(map) => map.get(node).copied(),
            Truth::Fixed(v) => Some(*v),
        }
    }
}

fn trace_claim(trace: &str) -> Option<f64> {
    trace
        .rsplit("-> ")
        .next()
        .filter(|_| trace.contains("-> "))
        .and_then(|rest| rest.split_whitespace().next())
        .and_then(|tok| tok.parse().ok())
}

fn format_ok(content: &str) -> bool {
    content.is_empty()
        || content
            .strip_prefix("value: ")
            .map(|rest| rest.parse::<f64>().is_ok())
            .unwrap_or(false)
}

/// Exact judge. Scores are binary per dimension:
/// logic checks the output against its own trace claim, format checks the
/// rendering shape, content checks the structured value against truth.
#[derive(Debug, Clone)]
pub struct OracleJudge {
    pub name: String,
    pub architecture: String,
    pub truth: Truth,
    pub delay: Duration,
}

impl OracleJudge {
    pub fn new(name: impl Into<String>, architecture: impl Into<String>, truth: Truth) -> OracleJudge {
        OracleJudge {
            name: name.into(),
            architecture: architecture.into(),
            truth,
            delay: Duration::ZERO,
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> OracleJudge {
        self.delay = delay;
        self
    }

    pub fn score(&self, req: &JudgeRequest) -> Result<Judgment, BackendError> {
        let expected = self.truth.expected(&req.node).ok_or_else(|| {
            BackendError::Config(format!("oracle has no truth for node {}", req.node.0))
        })?;
        let observed = parse_value(&req.output);

        let logic = match (trace_claim(&req.trace), observed) {
            (Some(claim), Some(out)) if !rel_eq(claim, out) => 0.0,
            _ => 1.0,
        };
        let format = if format_ok(&req.output.content) { 1.0 } else { 0.0 };
        let content_good = req.output.value().is_some_and(|v| rel_eq(v, expected))
            && !req.output.content.is_empty();
        let content = if content_good { 1.0 } else { 0.0 };

        let rationale = if content_good && logic == 1.0 && format == 1.0 {
            format!("value matches expected {expected}")
        } else {
            match observed {
                Some(v) => format!("expected {expected}, got {v}"),
                None => format!("expected {expected}, got no value"),
            }
        };
        Ok(Judgment {
            scores: DimensionScores::new(logic, format, content)
                .map_err(|e| BackendError::Malformed(e.to_string()))?,
            rationale,
        })
    }
}

#[async_trait]
impl MonitorBackend for OracleJudge {
    fn name(&self) -> &str {
        &self.name
    }

    fn architecture(&self) -> &str {
        &self.architecture
    }

    async fn judge(&self, req: JudgeRequest) -> Result<Judgment, BackendError> {
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        self.score(&req)
    }
}

/// Imperfect judge: detects a true error with probability `sensitivity`
/// and raises a spurious complaint on a clean output with probability
/// `false_positive`. Draws are keyed to the request seed, so verdicts
/// replay.
#[derive(Debug, Clone)]
pub struct StochasticJudge {
    pub inner: OracleJudge,
    pub sensitivity: f64,
    pub false_positive: f64,
}

impl StochasticJudge {
    pub fn new(inner: OracleJudge, sensitivity: f64, false_positive: f64) -> StochasticJudge {
        StochasticJudge { inner, sensitivity, false_positive }
    }
}

#[async_trait]
impl MonitorBackend for StochasticJudge {
    fn name(&self) -> &str {
        &self.inner.name
    }

    fn architecture(&self) -> &str {
        &self.inner.architecture
    }

    async fn judge(&self, req: JudgeRequest) -> Result<Judgment, BackendError> {
        if !self.inner.delay.is_zero() {
            tokio::time::sleep(self.inner.delay).await;
        }
        let honest = self.inner.score(&req)?;
        let mut rng = seed::rng(req.seed, &["stoch-judge"]);
        let truly_failing = honest.scores.iter().any(|(_, s)| s < 1.0);
        if truly_failing {
            if rng.gen::<f64>() < self.sensitivity {
                Ok(honest)
            } else {
                Ok(Judgment {
                    scores: DimensionScores::perfect(),
                    rationale: "no issue found".into(),
                })
            }
        } else if rng.gen::<f64>() < self.false_positive {
            Ok(Judgment {
                scores: DimensionScores::new(1.0, 1.0, 0.0).expect("in range"),
                rationale: "suspected content issue".into(),
            })
        } else {
            Ok(honest)
        }
    }
}

/// Judge with a structural blind spot: whatever the truth says, the
/// content dimension reports clean. Stands in for a monitor that shares
/// the worker's architecture and inherits its failure mode.
#[derive(Debug, Clone)]
pub struct BiasedJudge {
    pub inner: OracleJudge,
}

impl BiasedJudge {
    pub fn new(inner: OracleJudge) -> BiasedJudge {
        BiasedJudge { inner }
    }
}

#[async_trait]
impl MonitorBackend for BiasedJudge {
    fn name(&self) -> &str {
        &self.inner.name
    }

    fn architecture(&self) -> &str {
        &self.inner.architecture
    }

    async fn judge(&self, req: JudgeRequest) -> Result<Judgment, BackendError> {
        let honest = self.inner.score(&req)?;
        let scores = DimensionScores::new(
            honest.scores.logical_consistency,
            honest.scores.format_compliance,
            1.0,
        )
        .expect("in range");
        let rationale = if scores.iter().any(|(_, s)| s < 1.0) {
            honest.rationale
        } else {
            "value matches expected".into()
        };
        Ok(Judgment { scores, rationale })
    }
}

/// Reflection actor with a tunable acceptance trajectory. Round t (the
/// request attempt plus one) produces the correct output with probability
/// min(initial_accept + improvement * (t - 1), 1); frozen actors never
/// improve. The flags expose the convergence assumptions to inspection.
#[derive(Debug, Clone)]
pub struct SimActModel {
    pub name: String,
    pub target: f64,
    pub initial_accept: f64,
    pub improvement: f64,
    pub frozen: bool,
    pub valid_output_exists: bool,
    pub support_includes_valid: bool,
    /// Wrong rounds repeat the same wrong output byte for byte.
    pub oscillate: bool,
}

impl SimActModel {
    pub fn improving(name: impl Into<String>, target: f64, pi1: f64, delta: f64) -> SimActModel {
        SimActModel {
            name: name.into(),
            target,
            initial_accept: pi1,
            improvement: delta,
            frozen: false,
            valid_output_exists: true,
            support_includes_valid: true,
            oscillate: false,
        }
    }

    pub fn frozen(mut self) -> SimActModel {
        self.frozen = true;
        self
    }

    pub fn acceptance_at(&self, round: u32) -> f64 {
        if !self.valid_output_exists || !self.support_includes_valid {
            return 0.0;
        }
        if self.frozen {
            self.initial_accept
        } else {
            (self.initial_accept + self.improvement * f64::from(round.saturating_sub(1))).min(1.0)
        }
    }
}

#[async_trait]
impl AgentBackend for SimActModel {
    fn name(&self) -> &str {
        &self.name
    }

    async fn generate(&self, req: GenerateRequest) -> Result<GenerateResponse, BackendError> {
        let round = req.attempt + 1;
        let mut rng = seed::rng(
            req.seed,
            &["sim-act", &req.temperature.to_bits().to_string()],
        );
        let accept = rng.gen::<f64>() < self.acceptance_at(round);
        if accept {
            let payload = Payload::with_value(format!("value: {}", self.target), self.target);
            let trace = format!("round {round}: converged -> {}", self.target);
            return Ok(GenerateResponse { payload, trace, simulated_nanos: Some(0) });
        }
        let wrong = if self.oscillate {
            self.target + 1.0
        } else {
            self.target + f64::from(rng.gen_range(1u32..=9))
        };
        let payload = Payload::with_value(format!("value: {wrong}"), wrong);
        let trace = format!("round {round}: attempt -> {wrong}");
        Ok(GenerateResponse { payload, trace, simulated_nanos: Some(0) })
    }
}

/// Linear chain task: n nodes, each multiplying by `factor`, fed `input`.
pub fn mul_chain_spec(graph: &WorkflowGraph, factor: f64, input: f64) -> SimTaskSpec {
    let ops = graph
        .nodes()
        .map(|spec| (spec.id.clone(), ArithOp::Mul(factor)))
        .collect();
    SimTaskSpec { ops, input }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{linear_chain, NodeSpec};

    fn chain(n: usize) -> (WorkflowGraph, SimTaskSpec) {
        let graph = linear_chain(n, "sim", None);
        let spec = mul_chain_spec(&graph, 1.0, 1.0);
        (graph, spec)
    }

    fn gen_req(node: &str, inputs: &[(&str, f64)], seed: u64, attempt: u32) -> GenerateRequest {
        GenerateRequest {
            node: NodeId::new(node),
            prompt: String::new(),
            inputs: inputs
                .iter()
                .map(|(k, v)| ((*k).to_string(), Payload::with_value(format!("value: {v}"), *v)))
                .collect(),
            seed,
            temperature: 0.0,
            attempt,
        }
    }

    #[test]
    fn ground_truth_folds_the_graph() {
        let mut graph = WorkflowGraph::new();
        for id in ["a", "b", "c", "d"] {
            graph.add_node(NodeSpec::new(id, "sim", "{input}"));
        }
        graph.add_edge("a", "b");
        graph.add_edge("a", "c");
        graph.add_edge("b", "d");
        graph.add_edge("c", "d");
        let spec = SimTaskSpec {
            ops: BTreeMap::from([
                (NodeId::new("a"), ArithOp::Add(2.0)),
                (NodeId::new("b"), ArithOp::Mul(3.0)),
                (NodeId::new("c"), ArithOp::Add(1.0)),
                (NodeId::new("d"), ArithOp::Mul(2.0)),
            ]),
            input: 1.0,
        };
        let truth = spec.ground_truth(&graph).unwrap();
        // a = 3, b = 9, c = 4, d = 2 * (9 + 4) = 26.
        assert_eq!(truth[&NodeId::new("a")], 3.0);
        assert_eq!(truth[&NodeId::new("b")], 9.0);
        assert_eq!(truth[&NodeId::new("c")], 4.0);
        assert_eq!(truth[&NodeId::new("d")], 26.0);
    }

    #[tokio::test]
    async fn clean_agent_is_exact_and_deterministic() {
        let (_, spec) = chain(3);
        let agent = SimAgent::new("sim", spec);
        let a = agent.generate(gen_req("n00", &[], 7, 0)).await.unwrap();
        let b = agent.generate(gen_req("n00", &[], 7, 0)).await.unwrap();
        assert_eq!(a.payload, b.payload);
        assert_eq!(a.payload.value(), Some(1.0));
        assert_eq!(a.payload.content, "value: 1");
    }

    #[tokio::test]
    async fn perturbation_kinds_trip_their_dimensions() {
        let (graph, spec) = chain(1);
        let truth = Truth::PerNode(spec.ground_truth(&graph).unwrap());
        let judge = OracleJudge::new("oracle", "reference", truth);

        let cases = [
            (PerturbationKind::ValueScale, (1.0, 1.0, 0.0)),
            (PerturbationKind::DigitFlip, (0.0, 1.0, 0.0)),
            (PerturbationKind::FormatCorrupt, (1.0, 0.0, 1.0)),
            (PerturbationKind::Omission, (1.0, 1.0, 0.0)),
        ];
        for (kind, (logic, format, content)) in cases {
            let agent = SimAgent::new("sim", spec.clone()).with_errors(BTreeMap::from([(
                NodeId::new("n00"),
                NodeErrorModel::always(kind, 0.1),
            )]));
            let out = agent.generate(gen_req("n00", &[], 3, 0)).await.unwrap();
            let judgment = judge
                .judge(JudgeRequest {
                    node: NodeId::new("n00"),
                    output: out.payload,
                    trace: out.trace,
                    context: BTreeMap::new(),
                    seed: 1,
                })
                .await
                .unwrap();
            assert_eq!(
                (
                    judgment.scores.logical_consistency,
                    judgment.scores.format_compliance,
                    judgment.scores.content_completeness,
                ),
                (logic, format, content),
                "kind {kind:?}"
            );
        }
    }

    #[tokio::test]
    async fn error_composition_on_mul_chain_matches_product() {
        // Three nodes each scaling by 1.1: observed = 1.1^3, truth = 1.
        let (_, spec) = chain(3);
        let errors: BTreeMap<NodeId, NodeErrorModel> = ["n00", "n01", "n02"]
            .iter()
            .map(|id| {
                (
                    NodeId::new(*id),
                    NodeErrorModel::always(PerturbationKind::ValueScale, 0.1),
                )
            })
            .collect();
        let agent = SimAgent::new("sim", spec).with_errors(errors);

        let o0 = agent.generate(gen_req("n00", &[], 5, 0)).await.unwrap();
        let mut value = parse_value(&o0.payload).unwrap();
        let o1 = agent
            .generate(gen_req("n01", &[("n00", value)], 5, 0))
            .await
            .unwrap();
        value = parse_value(&o1.payload).unwrap();
        let o2 = agent
            .generate(gen_req("n02", &[("n01", value)], 5, 0))
            .await
            .unwrap();
        value = parse_value(&o2.payload).unwrap();
        let expected = 1.1f64.powi(3);
        assert!((value - expected).abs() < 1e-12, "got {value}");
    }

    #[tokio::test]
    async fn only_attempts_gate_clears_on_retry() {
        let (_, spec) = chain(1);
        let agent = SimAgent::new("sim", spec).with_errors(BTreeMap::from([(
            NodeId::new("n00"),
            NodeErrorModel::always(PerturbationKind::ValueScale, 0.5).first_attempt_only(),
        )]));
        let first = agent.generate(gen_req("n00", &[], 2, 0)).await.unwrap();
        let retry = agent.generate(gen_req("n00", &[], 9, 1)).await.unwrap();
        assert_eq!(parse_value(&first.payload), Some(1.5));
        assert_eq!(parse_value(&retry.payload), Some(1.0));
    }

    #[tokio::test]
    async fn stochastic_judge_extremes() {
        let judge_base = || OracleJudge::new("j", "ref", Truth::Fixed(4.0));
        let bad_req = || JudgeRequest {
            node: NodeId::new("n"),
            output: Payload::with_value("value: 5", 5.0),
            trace: "-> 5".into(),
            context: BTreeMap::new(),
            seed: 11,
        };
        let sharp = StochasticJudge::new(judge_base(), 1.0, 0.0);
        let blind = StochasticJudge::new(judge_base(), 0.0, 0.0);
        let caught = sharp.judge(bad_req()).await.unwrap();
        let missed = blind.judge(bad_req()).await.unwrap();
        assert_eq!(caught.scores.content_completeness, 0.0);
        assert_eq!(missed.scores.content_completeness, 1.0);

        // Same seed, same verdict.
        let again = sharp.judge(bad_req()).await.unwrap();
        assert_eq!(caught.scores, again.scores);
    }

    #[tokio::test]
    async fn biased_judge_is_blind_to_content_only() {
        let inner = OracleJudge::new("b", "exec-arch", Truth::Fixed(4.0));
        let biased = BiasedJudge::new(inner);
        let content_err = JudgeRequest {
            node: NodeId::new("n"),
            output: Payload::with_value("value: 5", 5.0),
            trace: "-> 5".into(),
            context: BTreeMap::new(),
            seed: 1,
        };
        let verdict = biased.judge(content_err).await.unwrap();
        assert_eq!(verdict.scores.content_completeness, 1.0);

        let format_err = JudgeRequest {
            node: NodeId::new("n"),
            output: Payload::with_value("val=4!!", 4.0),
            trace: "-> 4".into(),
            context: BTreeMap::new(),
            seed: 1,
        };
        let verdict = biased.judge(format_err).await.unwrap();
        assert_eq!(verdict.scores.format_compliance, 0.0);
    }

    #[tokio::test]
    async fn act_model_trajectory_and_oscillation() {
        let certain = SimActModel::improving("act", 6.0, 1.0, 0.0);
        let out = certain
            .generate(gen_req("reflect", &[], 1, 0))
            .await
            .unwrap();
        assert_eq!(parse_value(&out.payload), Some(6.0));

        let mut never = SimActModel::improving("act", 6.0, 0.9, 0.1);
        never.valid_output_exists = false;
        let out = never.generate(gen_req("reflect", &[], 1, 0)).await.unwrap();
        assert_ne!(parse_value(&out.payload), Some(6.0));

        let mut osc = SimActModel::improving("act", 6.0, 0.0, 0.0);
        osc.oscillate = true;
        let a = osc.generate(gen_req("reflect", &[], 1, 0)).await.unwrap();
        let b = osc.generate(gen_req("reflect", &[], 2, 1)).await.unwrap();
        assert_eq!(a.payload.digest(), b.payload.digest());
    }

    #[test]
    fn acceptance_schedule_saturates() {
        let model = SimActModel::improving("act", 1.0, 0.2, 0.1);
        assert!((model.acceptance_at(1) - 0.2).abs() < 1e-12);
        assert!((model.acceptance_at(5) - 0.6).abs() < 1e-12);
        assert!((model.acceptance_at(9) - 1.0).abs() < 1e-12);
        assert!((model.acceptance_at(20) - 1.0).abs() < 1e-12);
        let frozen = model.clone().frozen();
        assert!((frozen.acceptance_at(9) - 0.2).abs() < 1e-12);
    }
}
