//! Bookkeeping that binds in-flight tasks to the graph: who is running
//! for which (node, epoch, attempt), which of them must die on rollback,
//! when a monitor should run at all, and what a finished verdict means
//! for its node.

use std::collections::{BTreeMap, BTreeSet};

use tokio::task::AbortHandle;

use crate::correction::AttemptHistory;
use crate::graph::{Activation, NodeId, WorkflowGraph};
use crate::monitor::Verdict;
use crate::payload::Epoch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TaskKind {
    Generate,
    Assess,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TaskKey {
    pub kind: TaskKind,
    pub node: NodeId,
    pub epoch: Epoch,
    pub attempt: u32,
}

/// Abort handles for everything currently in flight. Rollback cancels
/// cooperatively through this: abort, then the event loop awaits the
/// joins before any re-dispatch writes, so a cancelled task can never
/// publish into the new epoch.
#[derive(Debug, Default)]
pub struct TaskRegistry {
    tasks: BTreeMap<TaskKey, AbortHandle>,
}

impl TaskRegistry {
    pub fn new() -> TaskRegistry {
        TaskRegistry::default()
    }

    pub fn insert(&mut self, key: TaskKey, handle: AbortHandle) {
        self.tasks.insert(key, handle);
    }

    pub fn remove(&mut self, key: &TaskKey) -> Option<AbortHandle> {
        self.tasks.remove(key)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn inflight_of(&self, kind: TaskKind) -> usize {
        self.tasks.keys().filter(|k| k.kind == kind).count()
    }

    /// Abort every task for `target` or its descendants running below
    /// `new_epoch`. Returns the aborted keys so the caller can await the
    /// corresponding joins.
    pub fn cancel_lineage(
        &mut self,
        graph: &WorkflowGraph,
        target: &NodeId,
        new_epoch: Epoch,
    ) -> Vec<TaskKey> {
        let mut doomed: BTreeSet<NodeId> = graph.descendants(target);
        doomed.insert(target.clone());
        let keys: Vec<TaskKey> = self
            .tasks
            .keys()
            .filter(|k| k.epoch < new_epoch && doomed.contains(&k.node))
            .cloned()
            .collect();
        for key in &keys {
            if let Some(handle) = self.tasks.remove(key) {
                handle.abort();
            }
        }
        keys
    }

    /// Abort everything. Shutdown path.
    pub fn drain(&mut self) -> Vec<TaskKey> {
        let keys: Vec<TaskKey> = self.tasks.keys().cloned().collect();
        for (_, handle) in std::mem::take(&mut self.tasks) {
            handle.abort();
        }
        keys
    }
}

/// Should this node's output be assessed at all? `Always` says yes.
/// `OnLowUpstreamConfidence` samples the parents' verdicts: if the least
/// confident parent falls below the cutoff, or a parent has no verdict
/// yet, the answer is yes. Sources have no upstream signal, so they are
/// assessed unconditionally.
pub fn should_assess(
    activation: &Activation,
    parents: &[NodeId],
    verdicts: &BTreeMap<NodeId, Verdict>,
) -> bool {
    match activation {
        Activation::Always => true,
        Activation::OnLowUpstreamConfidence { cutoff } => {
            if parents.is_empty() {
                return true;
            }
            let min_confidence = parents
                .iter()
                .map(|p| verdicts.get(p).map_or(0.0, |v| v.confidence))
                .fold(f64::INFINITY, f64::min);
            min_confidence < *cutoff
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteDecision {
    /// Verdict passes (or came back unavailable and fails open).
    Accept,
    /// Verdict fails and correction budget remains.
    Correct,
    /// Budget exhausted; commit the best attempt and mark degraded.
    GiveUp,
}

pub fn route_verdict(
    history: &AttemptHistory,
    verdict: &Verdict,
    max_corrections: u32,
) -> RouteDecision {
    if verdict.pass {
        RouteDecision::Accept
    } else if history.corrections_used() < max_corrections {
        RouteDecision::Correct
    } else {
        RouteDecision::GiveUp
    }
}
