//! Backend traits and the registry that wires names in a workflow file to
//! implementations. All network construction lives under this module; the
//! rest of the runtime only sees the two traits.

pub mod chaos;
pub mod remote;
pub mod sim;

use std::collections::BTreeMap;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::graph::NodeId;
use crate::monitor::DimensionScores;
use crate::payload::Payload;

#[derive(Debug, Clone, thiserror::Error, Serialize, Deserialize)]
pub enum BackendError {
    /// Transient or hard outage. Monitors fail open on this; agents abort
    /// the run after their internal retries.
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
pub struct GenerateRequest {
    pub node: NodeId,
    pub prompt: String,
    /// Resolved inputs by placeholder name (`input` or a parent id).
    pub inputs: BTreeMap<String, Payload>,
    pub seed: u64,
    pub temperature: f64,
    pub attempt: u32,
}

#[derive(Debug, Clone)]
pub struct GenerateResponse {
    pub payload: Payload,
    /// Reasoning trace recorded into the snapshot.
    pub trace: String,
    /// For backends that simulate their latency instead of incurring it:
    /// the simulated service duration. Latency accounting charges this
    /// rather than the measured call time, so host scheduling noise does
    /// not masquerade as service time. Real backends leave it unset.
    pub simulated_nanos: Option<u64>,
}

#[async_trait]
pub trait AgentBackend: Send + Sync {
    fn name(&self) -> &str;
    async fn generate(&self, req: GenerateRequest) -> Result<GenerateResponse, BackendError>;
}

#[derive(Debug, Clone)]
pub struct JudgeRequest {
    pub node: NodeId,
    pub output: Payload,
    pub trace: String,
    /// Upstream payloads by placeholder name, as seen by the producing node.
    pub context: BTreeMap<String, Payload>,
    pub seed: u64,
}

/// Raw judgment from a monitor backend; the monitoring engine turns this
/// into a confidence and an error category.
#[derive(Debug, Clone)]
pub struct Judgment {
    pub scores: DimensionScores,
    pub rationale: String,
}

#[async_trait]
pub trait MonitorBackend: Send + Sync {
    fn name(&self) -> &str;
    /// Architecture tag for diversity accounting in ensembles.
    fn architecture(&self) -> &str;
    async fn judge(&self, req: JudgeRequest) -> Result<Judgment, BackendError>;
}

/// Name -> implementation map for one run. Registries are value types: each
/// run owns its own, so concurrent runs cannot observe each other's wiring.
#[derive(Default, Clone)]
pub struct BackendRegistry {
    agents: BTreeMap<String, Arc<dyn AgentBackend>>,
    monitors: BTreeMap<String, Arc<dyn MonitorBackend>>,
    ensembles: BTreeMap<String, crate::ensemble::EnsembleSpec>,
}

impl BackendRegistry {
    pub fn new() -> BackendRegistry {
        BackendRegistry::default()
    }

    pub fn register_agent(&mut self, backend: Arc<dyn AgentBackend>) {
        self.agents.insert(backend.name().to_string(), backend);
    }

    pub fn register_monitor(&mut self, backend: Arc<dyn MonitorBackend>) {
        self.monitors.insert(backend.name().to_string(), backend);
    }

    pub fn register_ensemble(&mut self, name: &str, spec: crate::ensemble::EnsembleSpec) {
        self.ensembles.insert(name.to_string(), spec);
    }

    pub fn agent(&self, name: &str) -> Option<Arc<dyn AgentBackend>> {
        self.agents.get(name).cloned()
    }

    pub fn monitor(&self, name: &str) -> Option<Arc<dyn MonitorBackend>> {
        self.monitors.get(name).cloned()
    }

    pub fn ensemble(&self, name: &str) -> Option<&crate::ensemble::EnsembleSpec> {
        self.ensembles.get(name)
    }

    pub fn agent_names(&self) -> std::collections::BTreeSet<String> {
        self.agents.keys().cloned().collect()
    }

    /// Monitor references may name a plain monitor or an ensemble.
    pub fn monitor_names(&self) -> std::collections::BTreeSet<String> {
        self.monitors
            .keys()
            .chain(self.ensembles.keys())
            .cloned()
            .collect()
    }
}

impl std::fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendRegistry")
            .field("agents", &self.agents.keys().collect::<Vec<_>>())
            .field("monitors", &self.monitors.keys().collect::<Vec<_>>())
            .field("ensembles", &self.ensembles.keys().collect::<Vec<_>>())
            .finish()
    }
}
