//! Workflow DAG: nodes, edges, validation, and a deterministic schedule.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, GraphIssue, GraphIssueKind, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> NodeId {
        NodeId(id.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> NodeId {
        NodeId(s.to_string())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> NodeId {
        NodeId(s)
    }
}

/// Per-node monitor attachment. `backend` names either a monitor backend or
/// an ensemble (mode `Hcv`). `max_corrections` is the correction budget R for
/// this node; `threshold` is the minimum verdict confidence tau required to
/// act on a failing verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorSpec {
    pub backend: String,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_max_corrections")]
    pub max_corrections: u32,
    #[serde(default)]
    pub mode: MonitorMode,
    #[serde(default)]
    pub activation: Activation,
}

fn default_threshold() -> f64 {
    0.7
}
fn default_max_corrections() -> u32 {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonitorMode {
    /// One monitor backend assesses each output.
    #[default]
    Single,
    /// Like `Single`, but correction prompts additionally compose a sliding
    /// window of this node's prior (output, feedback) pairs, so the retry
    /// negotiates against its own recent history.
    Reflect,
    /// Assessment runs through a verification ensemble.
    Hcv,
}

/// When an assessment is dispatched at all.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Always,
    /// Dispatch only when the minimum confidence over the parents' verdicts
    /// is below `cutoff`. Parents without a verdict count as low confidence.
    OnLowUpstreamConfidence { cutoff: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub backend: String,
    pub prompt_template: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor: Option<MonitorSpec>,
}

impl NodeSpec {
    pub fn new(
        id: impl Into<NodeId>,
        backend: impl Into<String>,
        prompt_template: impl Into<String>,
    ) -> NodeSpec {
        NodeSpec {
            id: id.into(),
            backend: backend.into(),
            prompt_template: prompt_template.into(),
            monitor: None,
        }
    }
}

/// A workflow DAG. Node order is insertion order; all derived orders
/// (schedule, descendant sets) are deterministic functions of the graph.
#[derive(Debug, Clone, Default)]
pub struct WorkflowGraph {
    nodes: Vec<NodeSpec>,
    index: BTreeMap<NodeId, usize>,
    edges: Vec<(NodeId, NodeId)>,
}

impl WorkflowGraph {
    pub fn new() -> WorkflowGraph {
        WorkflowGraph::default()
    }

    /// Duplicate ids are kept and reported by `validate` rather than
    /// silently overwriting: config files are the usual source of nodes.
    pub fn add_node(&mut self, spec: NodeSpec) {
        let id = spec.id.clone();
        let pos = self.nodes.len();
        self.nodes.push(spec);
        self.index.entry(id).or_insert(pos);
    }

    pub fn add_edge(&mut self, from: impl Into<NodeId>, to: impl Into<NodeId>) {
        self.edges.push((from.into(), to.into()));
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeSpec> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn node_mut(&mut self, id: &NodeId) -> Option<&mut NodeSpec> {
        self.index.get(id).map(|&i| &mut self.nodes[i])
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.iter()
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn parents(&self, id: &NodeId) -> Vec<NodeId> {
        self.edges
            .iter()
            .filter(|(_, to)| to == id)
            .map(|(from, _)| from.clone())
            .collect()
    }

    pub fn children(&self, id: &NodeId) -> Vec<NodeId> {
        self.edges
            .iter()
            .filter(|(from, _)| from == id)
            .map(|(_, to)| to.clone())
            .collect()
    }

    /// Nodes with no incoming edge, in insertion order.
    pub fn sources(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .map(|n| n.id.clone())
            .filter(|id| self.parents(id).is_empty())
            .collect()
    }

    /// Nodes with no outgoing edge, in insertion order.
    pub fn sinks(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .map(|n| n.id.clone())
            .filter(|id| self.children(id).is_empty())
            .collect()
    }

    /// All nodes reachable from `id` via one or more edges. Excludes `id`.
    pub fn descendants(&self, id: &NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<NodeId> = self.children(id).into();
        while let Some(n) = queue.pop_front() {
            if seen.insert(n.clone()) {
                queue.extend(self.children(&n));
            }
        }
        seen
    }

    pub fn ancestors(&self, id: &NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<NodeId> = self.parents(id).into();
        while let Some(n) = queue.pop_front() {
            if seen.insert(n.clone()) {
                queue.extend(self.parents(&n));
            }
        }
        seen
    }

    /// Structural checks plus reference checks against the supplied backend
    /// and monitor name sets. Returns every issue found, not just the first.
    pub fn validate(&self, backends: &BTreeSet<String>, monitors: &BTreeSet<String>) -> Vec<GraphIssue> {
        let mut issues = Vec::new();

        let mut seen_ids = BTreeSet::new();
        let mut duplicates = false;
        for spec in &self.nodes {
            if !seen_ids.insert(spec.id.clone()) {
                duplicates = true;
                issues.push(GraphIssue {
                    kind: GraphIssueKind::DuplicateNode,
                    subject: spec.id.to_string(),
                });
            }
        }

        for (from, to) in &self.edges {
            for end in [from, to] {
                if !self.index.contains_key(end) {
                    issues.push(GraphIssue {
                        kind: GraphIssueKind::DanglingEdge,
                        subject: format!("{from} -> {to} (missing `{end}`)"),
                    });
                }
            }
        }

        if !self.nodes.is_empty() && self.sources().is_empty() {
            issues.push(GraphIssue {
                kind: GraphIssueKind::NoSource,
                subject: "every node has an incoming edge".to_string(),
            });
        }

        // Duplicate ids make the ordering bookkeeping meaningless, so the
        // cycle check only runs on a deduplicated id space.
        if !duplicates {
            if let Err(cycle_node) = self.toposort() {
                issues.push(GraphIssue {
                    kind: GraphIssueKind::Cycle,
                    subject: cycle_node.to_string(),
                });
            }
        }

        for spec in &self.nodes {
            if !backends.contains(&spec.backend) {
                issues.push(GraphIssue {
                    kind: GraphIssueKind::UnresolvedBackend,
                    subject: format!("{}: `{}`", spec.id, spec.backend),
                });
            }
            if let Some(m) = &spec.monitor {
                if !monitors.contains(&m.backend) {
                    issues.push(GraphIssue {
                        kind: GraphIssueKind::UnresolvedMonitor,
                        subject: format!("{}: `{}`", spec.id, m.backend),
                    });
                }
            }
            // Placeholders may reference the external input or any parent id.
            let mut allowed: BTreeSet<String> =
                self.parents(&spec.id).iter().map(|p| p.to_string()).collect();
            allowed.insert("input".to_string());
            for ph in placeholders(&spec.prompt_template) {
                if !allowed.contains(&ph) {
                    issues.push(GraphIssue {
                        kind: GraphIssueKind::UnboundPlaceholder,
                        subject: format!("{}: {{{ph}}}", spec.id),
                    });
                }
            }
        }

        issues
    }

    /// Kahn toposort; `Err` carries a node on a cycle. Among simultaneously
    /// ready nodes the lexicographically smallest id goes first, so the
    /// schedule is a pure function of the graph.
    fn toposort(&self) -> std::result::Result<Vec<NodeId>, NodeId> {
        let mut indegree: BTreeMap<NodeId, usize> =
            self.nodes.iter().map(|n| (n.id.clone(), 0)).collect();
        for (from, to) in &self.edges {
            if self.index.contains_key(from) && self.index.contains_key(to) && from != to {
                *indegree.get_mut(to).expect("node exists") += 1;
            }
            if from == to && self.index.contains_key(from) {
                return Err(from.clone());
            }
        }

        let mut ready: BTreeSet<NodeId> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(id, _)| id.clone())
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(id) = ready.iter().next().cloned() {
            ready.remove(&id);
            for child in self.children(&id) {
                if child == id {
                    continue;
                }
                if let Some(d) = indegree.get_mut(&child) {
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(child);
                    }
                }
            }
            order.push(id);
        }

        if order.len() == self.nodes.len() {
            Ok(order)
        } else {
            let ordered: BTreeSet<_> = order.into_iter().collect();
            // A missing id sits on a cycle. If every id was ordered, the
            // shortfall came from duplicate declarations; blame the first.
            let on_cycle = self
                .nodes
                .iter()
                .map(|n| n.id.clone())
                .find(|id| !ordered.contains(id))
                .or_else(|| {
                    let mut seen = BTreeSet::new();
                    self.nodes
                        .iter()
                        .map(|n| n.id.clone())
                        .find(|id| !seen.insert(id.clone()))
                })
                .unwrap_or_else(|| self.nodes[0].id.clone());
            Err(on_cycle)
        }
    }

    /// Deterministic execution schedule. Refuses structurally invalid graphs;
    /// backend references are checked separately at run wiring.
    pub fn schedule(&self) -> Result<Vec<NodeId>> {
        let structural: Vec<GraphIssue> = self
            .validate(&BTreeSet::new(), &BTreeSet::new())
            .into_iter()
            .filter(|i| {
                matches!(
                    i.kind,
                    GraphIssueKind::Cycle
                        | GraphIssueKind::DanglingEdge
                        | GraphIssueKind::DuplicateNode
                        | GraphIssueKind::NoSource
                )
            })
            .collect();
        if !structural.is_empty() {
            return Err(Error::InvalidGraph(structural));
        }
        self.toposort().map_err(|n| {
            Error::InvalidGraph(vec![GraphIssue {
                kind: GraphIssueKind::Cycle,
                subject: n.to_string(),
            }])
        })
    }

    /// Position of each node in the schedule; used for deterministic
    /// ordering of completions and pending-verdict processing.
    pub fn schedule_positions(&self) -> Result<BTreeMap<NodeId, usize>> {
        Ok(self
            .schedule()?
            .into_iter()
            .enumerate()
            .map(|(i, id)| (id, i))
            .collect())
    }
}

/// `{name}` placeholders in a prompt template, in order of appearance.
/// Doubled braces escape a literal brace.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if i + 1 < bytes.len() && bytes[i + 1] == b'{' {
                i += 2;
                continue;
            }
            if let Some(end) = template[i + 1..].find('}') {
                let name = &template[i + 1..i + 1 + end];
                if !name.is_empty() {
                    out.push(name.to_string());
                }
                i += end + 2;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Convenience constructor for an n-node linear chain `n0 -> n1 -> ...`
/// with zero-padded ids so lexicographic order matches chain order.
pub fn linear_chain(n: usize, backend: &str, monitor: Option<MonitorSpec>) -> WorkflowGraph {
    let mut g = WorkflowGraph::new();
    let width = n.to_string().len().max(2);
    let name = |i: usize| format!("n{i:0width$}");
    for i in 0..n {
        g.add_node(NodeSpec {
            id: NodeId::new(name(i)),
            backend: backend.to_string(),
            prompt_template: if i == 0 {
                "{input}".to_string()
            } else {
                format!("{{{}}}", name(i - 1))
            },
            monitor: monitor.clone(),
        });
        if i > 0 {
            g.add_edge(name(i - 1), name(i));
        }
    }
    g
}
