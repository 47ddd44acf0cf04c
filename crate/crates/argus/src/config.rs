//! Workflow files: one JSON document describing the graph, the backends it
//! runs against, and the run settings. A file is self-contained: loading it
//! yields a graph, a backend registry, and a run configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backends::remote::{RemoteAgent, RemoteEndpointConfig};
use crate::backends::sim::{BiasedJudge, NodeErrorModel, OracleJudge, SimAgent, SimTaskSpec, StochasticJudge, Truth};
use crate::backends::BackendRegistry;
use crate::ensemble::EnsembleSpec;
use crate::error::{Error, GraphIssue, Result};
use crate::executor::RunConfig;
use crate::graph::{NodeId, NodeSpec, WorkflowGraph};
use crate::monitor::{AggregationRule, DimensionCutoffs};
use crate::payload::Payload;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDecl {
    pub from: NodeId,
    pub to: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    /// Text handed to source nodes.
    #[serde(default)]
    pub input: String,
    /// Structured value attached to the input, when the task is numeric.
    #[serde(default)]
    pub input_value: Option<f64>,
    #[serde(default)]
    pub base_temperature: f64,
    #[serde(default = "default_inflight")]
    pub max_inflight_assessments: usize,
    #[serde(default = "default_monitor_timeout_ms")]
    pub monitor_timeout_ms: u64,
    #[serde(default = "default_aggregation")]
    pub aggregation: AggregationRule,
    #[serde(default)]
    pub cutoffs: DimensionCutoffs,
    #[serde(default)]
    pub snapshot_budget: Option<usize>,
    #[serde(default)]
    pub retention_preference: BTreeSet<NodeId>,
}

fn default_inflight() -> usize {
    crate::executor::DEFAULT_MAX_INFLIGHT_ASSESSMENTS
}
fn default_monitor_timeout_ms() -> u64 {
    crate::monitor::DEFAULT_MONITOR_TIMEOUT.as_millis() as u64
}
fn default_aggregation() -> AggregationRule {
    AggregationRule::Min
}

impl Default for RunSection {
    fn default() -> RunSection {
        RunSection {
            seed: 0,
            input: String::new(),
            input_value: None,
            base_temperature: 0.0,
            max_inflight_assessments: default_inflight(),
            monitor_timeout_ms: default_monitor_timeout_ms(),
            aggregation: default_aggregation(),
            cutoffs: DimensionCutoffs::default(),
            snapshot_budget: None,
            retention_preference: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDecl {
    pub name: String,
    #[serde(flatten)]
    pub kind: AgentKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Sim {
        spec: SimTaskSpec,
        #[serde(default)]
        errors: BTreeMap<NodeId, NodeErrorModel>,
        #[serde(default)]
        delay_ms: u64,
    },
    Remote {
        endpoint: RemoteEndpointConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorDecl {
    pub name: String,
    pub architecture: String,
    #[serde(flatten)]
    pub kind: MonitorKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonitorKind {
    Oracle {
        truth: Truth,
        #[serde(default)]
        delay_ms: u64,
    },
    /// Oracle with imperfect sensitivity and a false-positive rate.
    Stochastic {
        truth: Truth,
        sensitivity: f64,
        false_positive: f64,
    },
    /// Oracle blind to content errors; the cross-validation fixture.
    Biased {
        truth: Truth,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WorkflowFile {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub edges: Vec<EdgeDecl>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub agents: Vec<AgentDecl>,
    #[serde(default)]
    pub monitors: Vec<MonitorDecl>,
    #[serde(default)]
    pub ensembles: BTreeMap<String, EnsembleSpec>,
}

impl WorkflowFile {
    pub fn from_json(text: &str) -> Result<WorkflowFile> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<WorkflowFile> {
        let text = std::fs::read_to_string(path)?;
        WorkflowFile::from_json(&text)
    }

    pub fn graph(&self) -> WorkflowGraph {
        let mut g = WorkflowGraph::new();
        for node in &self.nodes {
            g.add_node(node.clone());
        }
        for edge in &self.edges {
            g.add_edge(edge.from.clone(), edge.to.clone());
        }
        g
    }

    pub fn registry(&self) -> Result<BackendRegistry> {
        let mut registry = BackendRegistry::new();
        for decl in &self.agents {
            match &decl.kind {
                AgentKind::Sim { spec, errors, delay_ms } => {
                    let mut agent = SimAgent::new(&decl.name, spec.clone());
                    if !errors.is_empty() {
                        agent = agent.with_errors(errors.clone());
                    }
                    if *delay_ms > 0 {
                        agent = agent.with_delay(Duration::from_millis(*delay_ms));
                    }
                    registry.register_agent(Arc::new(agent));
                }
                AgentKind::Remote { endpoint } => {
                    let agent = RemoteAgent::new(&decl.name, endpoint.clone())
                        .map_err(|e| Error::Backend { backend: decl.name.clone(), message: e.to_string() })?;
                    registry.register_agent(Arc::new(agent));
                }
            }
        }
        for decl in &self.monitors {
            match &decl.kind {
                MonitorKind::Oracle { truth, delay_ms } => {
                    let mut judge = OracleJudge::new(&decl.name, &decl.architecture, truth.clone());
                    if *delay_ms > 0 {
                        judge = judge.with_delay(Duration::from_millis(*delay_ms));
                    }
                    registry.register_monitor(Arc::new(judge));
                }
                MonitorKind::Stochastic { truth, sensitivity, false_positive } => {
                    let inner = OracleJudge::new(&decl.name, &decl.architecture, truth.clone());
                    registry.register_monitor(Arc::new(StochasticJudge::new(
                        inner,
                        *sensitivity,
                        *false_positive,
                    )));
                }
                MonitorKind::Biased { truth } => {
                    let inner = OracleJudge::new(&decl.name, &decl.architecture, truth.clone());
                    registry.register_monitor(Arc::new(BiasedJudge::new(inner)));
                }
            }
        }
        for (name, spec) in &self.ensembles {
            registry.register_ensemble(name, spec.clone());
        }
        Ok(registry)
    }

    /// Structural and reference checks against the declared backends.
    pub fn validate(&self) -> Result<Vec<GraphIssue>> {
        let registry = self.registry()?;
        Ok(self
            .graph()
            .validate(&registry.agent_names(), &registry.monitor_names()))
    }

    pub fn run_config(&self, run_id: impl Into<String>) -> RunConfig {
        let input = match self.run.input_value {
            Some(v) => Payload::with_value(self.run.input.clone(), v),
            None => Payload::text(self.run.input.clone()),
        };
        let mut cfg = RunConfig::new(run_id, self.run.seed, input);
        cfg.base_temperature = self.run.base_temperature;
        cfg.max_inflight_assessments = self.run.max_inflight_assessments;
        cfg.monitor_timeout = Duration::from_millis(self.run.monitor_timeout_ms);
        cfg.aggregation = self.run.aggregation.clone();
        cfg.cutoffs = self.run.cutoffs;
        cfg.snapshot_budget = self.run.snapshot_budget;
        cfg.retention_preference = self.run.retention_preference.clone();
        cfg
    }

    /// Expected final value when the file drives a single sim task spec;
    /// used for scoring runs against ground truth.
    pub fn expected_final_value(&self) -> Option<f64> {
        let mut sim_specs = self.agents.iter().filter_map(|a| match &a.kind {
            AgentKind::Sim { spec, .. } => Some(spec),
            AgentKind::Remote { .. } => None,
        });
        let spec = sim_specs.next()?;
        if sim_specs.next().is_some() {
            return None;
        }
        let graph = self.graph();
        let truth = spec.ground_truth(&graph).ok()?;
        let sinks = graph.sinks();
        let values: Vec<f64> = sinks.iter().filter_map(|s| truth.get(s).copied()).collect();
        if values.len() != sinks.len() || values.is_empty() {
            return None;
        }
        Some(values.iter().sum())
    }
}
