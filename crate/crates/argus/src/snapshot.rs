use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::NodeId;
use crate::monitor::Verdict;
use crate::payload::{Epoch, Payload};

/// Identity of one node execution: at most one snapshot exists per key.
/// `epoch` is the epoch the task was launched under; `attempt` counts
/// corrections applied to this node (re-runs of invalidated descendants
/// restart at the attempt they were invalidated with).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SnapshotKey {
    pub node: NodeId,
    pub epoch: Epoch,
    pub attempt: u32,
}

impl SnapshotKey {
    pub fn new(node: impl Into<NodeId>, epoch: Epoch, attempt: u32) -> SnapshotKey {
        SnapshotKey { node: node.into(), epoch, attempt }
    }
}

impl std::fmt::Display for SnapshotKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@e{}#a{}", self.node, self.epoch, self.attempt)
    }
}

/// Everything needed to replay or roll back one node execution: the resolved
/// inputs, the rendered prompt, the output, the reasoning trace, and any
/// verdicts attached after the fact. `timestamp_nanos` is monotonic within
/// a run (nanoseconds since run start), not wall-clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub node: NodeId,
    pub epoch: Epoch,
    pub attempt: u32,
    /// Canonical input payload (single upstream value or merged view).
    pub input: Payload,
    /// All resolved inputs by placeholder name, including `input`.
    pub context: BTreeMap<String, Payload>,
    pub output: Payload,
    /// Rendered prompts, one per attempt that reached this node lineage;
    /// never empty once the node has executed.
    pub prompt_history: Vec<String>,
    pub reasoning_trace: String,
    /// Verdicts are append-only; nothing ever rewrites an earlier one.
    pub diagnostics: Vec<Verdict>,
    pub timestamp_nanos: u64,
}

impl Snapshot {
    pub fn key(&self) -> SnapshotKey {
        SnapshotKey {
            node: self.node.clone(),
            epoch: self.epoch,
            attempt: self.attempt,
        }
    }
}
