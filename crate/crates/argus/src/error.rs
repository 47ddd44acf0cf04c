use crate::graph::NodeId;
use crate::snapshot::SnapshotKey;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("graph validation failed: {0:?}")]
    InvalidGraph(Vec<GraphIssue>),

    #[error("snapshot not found: {0}")]
    SnapshotNotFound(SnapshotKey),

    #[error("snapshot store: {0}")]
    Store(String),

    #[error("config: {0}")]
    Config(String),

    #[error("backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String },

    #[error("node `{node}` aborted the run: {message}")]
    NodeAborted { node: NodeId, message: String },

    #[error("monitor weights must sum to 1 (got {0})")]
    BadWeights(f64),

    #[error("ensemble inconclusive: {0} usable verdicts (need >= 2)")]
    EnsembleInconclusive(usize),

    #[error("retention: {0}")]
    Retention(String),

    #[error("reflection: {0}")]
    Reflection(String),

    // Source errors carry the detail; repeating it here would double it
    // in rendered chains.
    #[error("io")]
    Io(#[from] std::io::Error),

    #[error("serialization")]
    Serde(#[from] serde_json::Error),
}

/// One defect found by graph validation. `subject` names the offending node
/// or edge so error lists stay actionable without the graph in hand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphIssue {
    pub kind: GraphIssueKind,
    pub subject: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphIssueKind {
    Cycle,
    DanglingEdge,
    DuplicateNode,
    NoSource,
    UnresolvedBackend,
    UnresolvedMonitor,
    UnboundPlaceholder,
}

impl std::fmt::Display for GraphIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.subject)
    }
}
