//! Speculative DAG executor with epoch-versioned rollback.
//!
//! One event loop owns all run state. Node tasks and assessment tasks run
//! concurrently and report back over a channel; the loop is the only writer,
//! so there are no locks on the hot path and every decision point is
//! serialized. Children dispatch the moment a parent commits; assessment of
//! that parent runs off the critical path. A failing verdict triggers a
//! rollback: the epoch bumps once, every task in the failing node's lineage
//! is aborted and awaited, the lineage's snapshots are invalidated, and the
//! node re-dispatches with an augmented prompt and perturbed decoding.
//!
//! Determinism under racing completions rests on three rules. Commits and
//! verdicts for invalidated snapshots are discarded (and counted as debt),
//! never acted on. Failing verdicts are processed upstream-first, and only
//! once every ancestor's assessment has resolved, so a child's stale-input
//! failure can never fire before the upstream correction that explains it.
//! And attempt counters bump only when a node itself is corrected; re-runs
//! of invalidated descendants keep their attempt index at the new epoch.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use crate::backends::{BackendError, BackendRegistry, GenerateRequest, GenerateResponse, JudgeRequest, MonitorBackend};
use crate::binding::{route_verdict, should_assess, RouteDecision, TaskKey, TaskKind, TaskRegistry};
use crate::correction::{give_up, plan_rollback, AttemptHistory, AugmentTemplate, CorrectionRequest};
use crate::ensemble::{cross_validate, escalate_decision, EnsembleSpec, EscalationDecision, MemberSpec};
use crate::error::{Error, Result};
use crate::graph::{Activation, MonitorMode, MonitorSpec, NodeId, WorkflowGraph};
use crate::monitor::{
    aggregate, AggregationRule, Assessor, DimensionCutoffs, DimensionScores, ErrorCategory,
    SignatureLedger, Verdict, DEFAULT_MONITOR_TIMEOUT,
};
use crate::payload::{Epoch, Payload, Provenance, Scalar};
use crate::reflection::{compose_context, Feedback, RoundState, TraceRef, DEFAULT_WINDOW};
use crate::seed;
use crate::snapshot::{Snapshot, SnapshotKey};
use crate::store::{PruneReport, SnapshotStore};

pub const DEFAULT_MAX_INFLIGHT_ASSESSMENTS: usize = 64;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub run_id: String,
    pub seed: u64,
    /// External input handed to source nodes.
    pub input: Payload,
    pub base_temperature: f64,
    /// Assessment saturation limit: beyond this many concurrent
    /// assessments, new ones are dropped and counted as debt.
    pub max_inflight_assessments: usize,
    pub monitor_timeout: Duration,
    pub aggregation: AggregationRule,
    pub cutoffs: DimensionCutoffs,
    /// Prune the snapshot store down to this many entries at run end.
    pub snapshot_budget: Option<usize>,
    /// Nodes whose latest snapshots pruning should prefer to keep.
    pub retention_preference: BTreeSet<NodeId>,
    pub augment: AugmentTemplate,
}

impl RunConfig {
    pub fn new(run_id: impl Into<String>, run_seed: u64, input: Payload) -> RunConfig {
        RunConfig {
            run_id: run_id.into(),
            seed: run_seed,
            input,
            base_temperature: 0.0,
            max_inflight_assessments: DEFAULT_MAX_INFLIGHT_ASSESSMENTS,
            monitor_timeout: DEFAULT_MONITOR_TIMEOUT,
            aggregation: AggregationRule::Min,
            cutoffs: DimensionCutoffs::default(),
            snapshot_budget: None,
            retention_preference: BTreeSet::new(),
            augment: AugmentTemplate::default(),
        }
    }
}

/// Oversight the run skipped or discarded instead of blocking on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitoringDebt {
    /// Assessments never dispatched because the in-flight cap was hit.
    pub dropped_assessments: u64,
    /// Verdicts that arrived for an invalidated or superseded snapshot.
    pub stale_verdicts: u64,
    /// Verdicts that failed open because the monitor was unreachable.
    pub unavailable_verdicts: u64,
    /// Node completions that arrived after their lineage was invalidated.
    pub stale_results: u64,
}

impl MonitoringDebt {
    pub fn total(&self) -> u64 {
        self.dropped_assessments + self.stale_verdicts + self.unavailable_verdicts + self.stale_results
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionEntry {
    pub node: NodeId,
    pub epoch: Epoch,
    pub attempt: u32,
    pub output_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionEvent {
    pub node: NodeId,
    pub failed_attempt: u32,
    pub next_attempt: u32,
    /// Epoch the corrected dispatch launches under.
    pub epoch: Epoch,
    pub category: ErrorCategory,
    pub monitor: String,
    pub systematic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub run_id: String,
    /// Surviving lineage only, ordered by (epoch, schedule position).
    pub completions: Vec<CompletionEntry>,
    pub final_output: Payload,
    pub sink_outputs: BTreeMap<NodeId, Payload>,
    pub corrections: Vec<CorrectionEvent>,
    /// Epoch bumps applied; always equals `final_epoch`.
    pub rollbacks: u64,
    /// Some node committed a best-effort output after exhausting its budget.
    pub degraded: bool,
    pub final_epoch: Epoch,
    pub attempts_total: u64,
    /// Final attempt count per node (corrections of the node plus one).
    pub node_attempts: BTreeMap<NodeId, u32>,
    /// Accounted critical path: node service time plus event-loop dispatch
    /// cost along the longest dependency chain of the surviving lineage.
    /// Verdict wait and re-execution are charged where a correction forced
    /// them; monitor compute that merely overlapped execution is not, even
    /// when a busy host interleaved it into the wall clock.
    pub critical_path_nanos: u64,
    /// Run start to last surviving commit in wall time.
    pub wall_nanos: u64,
    /// Wall time from the last commit until assessments finished draining.
    pub monitor_drain_nanos: u64,
    /// Cumulative time in dispatch bookkeeping on the event loop.
    pub dispatch_nanos: u64,
    pub debt: MonitoringDebt,
    pub prune: Option<PruneReport>,
}

/// Deterministic projection of a record: everything a same-seed re-run must
/// reproduce exactly. Time and debt are excluded; both depend on scheduling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayView {
    pub completions: Vec<CompletionEntry>,
    pub sink_digests: BTreeMap<NodeId, String>,
    pub final_digest: String,
    pub corrections: Vec<CorrectionEvent>,
    pub rollbacks: u64,
    pub degraded: bool,
    pub final_epoch: Epoch,
    pub node_attempts: BTreeMap<NodeId, u32>,
}

impl ExecutionRecord {
    pub fn replay_view(&self) -> ReplayView {
        ReplayView {
            completions: self.completions.clone(),
            sink_digests: self
                .sink_outputs
                .iter()
                .map(|(n, p)| (n.clone(), p.digest()))
                .collect(),
            final_digest: self.final_output.digest(),
            corrections: self.corrections.clone(),
            rollbacks: self.rollbacks,
            degraded: self.degraded,
            final_epoch: self.final_epoch,
            node_attempts: self.node_attempts.clone(),
        }
    }
}

enum Event {
    Generated {
        node: NodeId,
        epoch: Epoch,
        attempt: u32,
        prompt: String,
        input: Payload,
        context: BTreeMap<String, Payload>,
        /// Time spent inside the backend call, measured in the task.
        service_nanos: u64,
        result: std::result::Result<GenerateResponse, BackendError>,
    },
    Assessed {
        key: SnapshotKey,
        /// Time spent inside the judge call, measured in the task.
        service_nanos: u64,
        verdict: Box<Verdict>,
    },
}

enum ResolvedMonitor {
    Single {
        backend: Arc<dyn MonitorBackend>,
    },
    Ensemble {
        spec: EnsembleSpec,
        members: Vec<(MemberSpec, Arc<dyn MonitorBackend>)>,
    },
}

struct PendingFailure {
    key: SnapshotKey,
    verdict: Verdict,
}

pub struct Executor {
    graph: Arc<WorkflowGraph>,
    backends: Arc<BackendRegistry>,
    store: Arc<SnapshotStore>,
}

impl Executor {
    pub fn new(
        graph: Arc<WorkflowGraph>,
        backends: Arc<BackendRegistry>,
        store: Arc<SnapshotStore>,
    ) -> Executor {
        Executor { graph, backends, store }
    }

    pub fn store(&self) -> &Arc<SnapshotStore> {
        &self.store
    }

    pub async fn run(&self, cfg: &RunConfig) -> Result<ExecutionRecord> {
        let issues = self
            .graph
            .validate(&self.backends.agent_names(), &self.backends.monitor_names());
        if !issues.is_empty() {
            return Err(Error::InvalidGraph(issues));
        }
        // Weight errors surface before any work is dispatched.
        aggregate(&DimensionScores::perfect(), &cfg.aggregation)?;

        let mut loop_state = LoopState::new(self, cfg)?;
        loop_state.resolve_monitors()?;
        loop_state.run().await
    }
}

struct LoopState<'a> {
    graph: &'a WorkflowGraph,
    backends: &'a BackendRegistry,
    store: &'a Arc<SnapshotStore>,
    cfg: &'a RunConfig,

    schedule: Vec<NodeId>,
    positions: BTreeMap<NodeId, usize>,
    monitors: BTreeMap<NodeId, ResolvedMonitor>,

    current_epoch: Epoch,
    committed: BTreeMap<NodeId, SnapshotKey>,
    invalidated: BTreeSet<SnapshotKey>,
    min_live_epoch: BTreeMap<NodeId, Epoch>,
    histories: BTreeMap<NodeId, AttemptHistory>,
    attempt_counter: BTreeMap<NodeId, u32>,
    override_prompt: BTreeMap<NodeId, String>,
    seed_offset: BTreeMap<NodeId, u64>,
    temp_delta: BTreeMap<NodeId, f64>,
    prompts_used: BTreeMap<NodeId, Vec<String>>,
    latest_verdicts: BTreeMap<NodeId, Verdict>,
    pending_failures: BTreeMap<NodeId, PendingFailure>,
    /// Conditionally monitored commits whose assessment decision waits on
    /// an upstream assessment still in flight.
    deferred_assess: BTreeMap<NodeId, SnapshotKey>,

    registry: TaskRegistry,
    joins: BTreeMap<TaskKey, JoinHandle<()>>,
    tx: mpsc::UnboundedSender<Event>,
    rx: mpsc::UnboundedReceiver<Event>,
    ledger: Arc<SignatureLedger>,

    corrections: Vec<CorrectionEvent>,
    debt: MonitoringDebt,
    degraded: bool,
    rollbacks: u64,

    started: Instant,
    last_commit: Instant,
    dispatch_nanos: u64,

    // Causal latency accounting. Each commit is stamped with the accounted
    // time it became available: parents' stamps, plus loop work on the
    // path, plus the node's own service time. Monitor compute enters only
    // through a failing verdict, whose stamp gates the re-dispatch it
    // forces. Wall-clock interleaving with assessment work on a loaded
    // host is excluded by construction.
    acct: BTreeMap<SnapshotKey, u64>,
    dispatch_acct: BTreeMap<TaskKey, u64>,
    verdict_acct: BTreeMap<SnapshotKey, u64>,
    correction_acct: BTreeMap<NodeId, u64>,
    slice_start: Instant,
    commit_slice: u64,
}

impl<'a> LoopState<'a> {
    fn new(executor: &'a Executor, cfg: &'a RunConfig) -> Result<LoopState<'a>> {
        let schedule = executor.graph.schedule()?;
        let positions = executor.graph.schedule_positions()?;
        let (tx, rx) = mpsc::unbounded_channel();
        let now = Instant::now();
        Ok(LoopState {
            graph: &executor.graph,
            backends: &executor.backends,
            store: &executor.store,
            cfg,
            schedule,
            positions,
            monitors: BTreeMap::new(),
            current_epoch: Epoch(0),
            committed: BTreeMap::new(),
            invalidated: BTreeSet::new(),
            min_live_epoch: BTreeMap::new(),
            histories: BTreeMap::new(),
            attempt_counter: BTreeMap::new(),
            override_prompt: BTreeMap::new(),
            seed_offset: BTreeMap::new(),
            temp_delta: BTreeMap::new(),
            prompts_used: BTreeMap::new(),
            latest_verdicts: BTreeMap::new(),
            pending_failures: BTreeMap::new(),
            deferred_assess: BTreeMap::new(),
            registry: TaskRegistry::new(),
            joins: BTreeMap::new(),
            tx,
            rx,
            ledger: Arc::new(SignatureLedger::new()),
            corrections: Vec::new(),
            debt: MonitoringDebt::default(),
            degraded: false,
            rollbacks: 0,
            started: now,
            last_commit: now,
            dispatch_nanos: 0,
            acct: BTreeMap::new(),
            dispatch_acct: BTreeMap::new(),
            verdict_acct: BTreeMap::new(),
            correction_acct: BTreeMap::new(),
            slice_start: now,
            commit_slice: 0,
        })
    }

    fn slice_nanos(&self) -> u64 {
        self.slice_start.elapsed().as_nanos() as u64
    }

    /// Resolve every monitor reference up front so a bad ensemble member
    /// name fails the run before any task launches.
    fn resolve_monitors(&mut self) -> Result<()> {
        for spec in self.graph.nodes() {
            let Some(mspec) = &spec.monitor else { continue };
            let resolved = match mspec.mode {
                MonitorMode::Single | MonitorMode::Reflect => {
                    let backend = self.backends.monitor(&mspec.backend).ok_or_else(|| {
                        Error::Config(format!("unknown monitor backend `{}`", mspec.backend))
                    })?;
                    ResolvedMonitor::Single { backend }
                }
                MonitorMode::Hcv => {
                    let espec = self
                        .backends
                        .ensemble(&mspec.backend)
                        .ok_or_else(|| {
                            Error::Config(format!("unknown ensemble `{}`", mspec.backend))
                        })?
                        .clone();
                    espec.validate()?;
                    let mut members = Vec::new();
                    for member in &espec.members {
                        let backend = self.backends.monitor(&member.backend).ok_or_else(|| {
                            Error::Config(format!(
                                "ensemble `{}` names unknown member `{}`",
                                mspec.backend, member.backend
                            ))
                        })?;
                        members.push((member.clone(), backend));
                    }
                    ResolvedMonitor::Ensemble { spec: espec, members }
                }
            };
            self.monitors.insert(spec.id.clone(), resolved);
        }
        Ok(())
    }

    async fn run(mut self) -> Result<ExecutionRecord> {
        self.slice_start = Instant::now();
        self.dispatch_ready();
        while !self.is_complete() {
            let Some(event) = self.rx.recv().await else {
                return Err(Error::Config("event channel closed mid-run".into()));
            };
            self.slice_start = Instant::now();
            self.commit_slice = 0;
            match event {
                Event::Generated {
                    node,
                    epoch,
                    attempt,
                    prompt,
                    input,
                    context,
                    service_nanos,
                    result,
                } => {
                    self.on_generated(node, epoch, attempt, prompt, input, context, service_nanos, result)
                        .await?;
                }
                Event::Assessed { key, service_nanos, verdict } => {
                    self.on_assessed(key, service_nanos, *verdict).await?;
                }
            }
        }
        self.finalize()
    }

    fn is_complete(&self) -> bool {
        self.registry.is_empty()
            && self.pending_failures.is_empty()
            && self.schedule.iter().all(|n| self.committed.contains_key(n))
    }

    fn committed_valid(&self, node: &NodeId) -> Option<&SnapshotKey> {
        self.committed
            .get(node)
            .filter(|k| !self.invalidated.contains(*k))
    }

    fn dispatch_ready(&mut self) {
        let t0 = Instant::now();
        let candidates: Vec<NodeId> = self
            .schedule
            .iter()
            .filter(|n| self.committed_valid(n).is_none())
            .filter(|n| !self.has_inflight(TaskKind::Generate, n))
            .filter(|n| {
                self.graph
                    .parents(n)
                    .iter()
                    .all(|p| self.committed_valid(p).is_some())
            })
            .cloned()
            .collect();
        for node in candidates {
            self.dispatch_generate(&node);
        }
        self.dispatch_nanos += t0.elapsed().as_nanos() as u64;
    }

    fn has_inflight(&self, kind: TaskKind, node: &NodeId) -> bool {
        self.joins
            .keys()
            .any(|k| k.kind == kind && &k.node == node)
    }

    fn dispatch_generate(&mut self, node: &NodeId) {
        let spec = self.graph.node(node).expect("validated node").clone();
        let attempt = self.attempt_counter.get(node).copied().unwrap_or(0);
        let epoch = self.current_epoch;

        let parents = self.graph.parents(node);
        let mut context: BTreeMap<String, Payload> = BTreeMap::new();
        if parents.is_empty() {
            context.insert("input".to_string(), self.cfg.input.clone());
        } else {
            for p in &parents {
                let key = self.committed_valid(p).expect("ready implies valid parents");
                let output = self.store.get(key).expect("committed snapshot exists").output;
                context.insert(p.to_string(), output);
            }
        }
        let input = merge_inputs(&self.cfg.input, &parents, &context);

        let prompt = match self.override_prompt.get(node) {
            Some(p) => p.clone(),
            None => render_prompt(&spec.prompt_template, &self.cfg.input, &context),
        };
        self.prompts_used.entry(node.clone()).or_default().push(prompt.clone());

        let gen_seed = seed::derive(
            self.cfg.seed,
            &["gen", node.as_str(), &attempt.to_string()],
        )
        .wrapping_add(self.seed_offset.get(node).copied().unwrap_or(0));
        let temperature =
            self.cfg.base_temperature + self.temp_delta.get(node).copied().unwrap_or(0.0);

        // Accounted readiness: parents' stamps, any verdict that forced
        // this dispatch, plus loop work since the commit that enabled it.
        let mut ready_acct = self.correction_acct.remove(node).unwrap_or(0);
        for p in &parents {
            if let Some(k) = self.committed_valid(p) {
                if let Some(&a) = self.acct.get(k) {
                    ready_acct = ready_acct.max(a);
                }
            }
        }
        ready_acct += self.slice_nanos().saturating_sub(self.commit_slice);

        let backend = self.backends.agent(&spec.backend).expect("validated backend");
        let tx = self.tx.clone();
        let req = GenerateRequest {
            node: node.clone(),
            prompt: prompt.clone(),
            inputs: context.clone(),
            seed: gen_seed,
            temperature,
            attempt,
        };
        let node_for_task = node.clone();
        let handle = tokio::spawn(async move {
            let t0 = Instant::now();
            let result = backend.generate(req).await;
            let measured = t0.elapsed().as_nanos() as u64;
            let service_nanos = match &result {
                Ok(resp) => resp.simulated_nanos.unwrap_or(measured),
                Err(_) => measured,
            };
            let _ = tx.send(Event::Generated {
                node: node_for_task,
                epoch,
                attempt,
                prompt,
                input,
                context,
                service_nanos,
                result,
            });
        });
        let key = TaskKey { kind: TaskKind::Generate, node: node.clone(), epoch, attempt };
        self.dispatch_acct.insert(key.clone(), ready_acct);
        self.registry.insert(key.clone(), handle.abort_handle());
        self.joins.insert(key, handle);
    }

    #[allow(clippy::too_many_arguments)]
    async fn on_generated(
        &mut self,
        node: NodeId,
        epoch: Epoch,
        attempt: u32,
        prompt: String,
        input: Payload,
        context: BTreeMap<String, Payload>,
        service_nanos: u64,
        result: std::result::Result<GenerateResponse, BackendError>,
    ) -> Result<()> {
        let task_key = TaskKey { kind: TaskKind::Generate, node: node.clone(), epoch, attempt };
        self.registry.remove(&task_key);
        self.joins.remove(&task_key);
        let base_acct = self.dispatch_acct.remove(&task_key).unwrap_or(0);

        let floor = self.min_live_epoch.get(&node).copied().unwrap_or(Epoch(0));
        if epoch < floor {
            // Completed between the rollback decision and abort delivery.
            self.debt.stale_results += 1;
            self.dispatch_ready();
            return Ok(());
        }

        let resp = match result {
            Ok(resp) => resp,
            Err(e) => {
                self.registry.drain();
                return Err(Error::NodeAborted { node, message: e.to_string() });
            }
        };

        let mut output = resp.payload;
        output.provenance = Some(Provenance { node: node.clone(), epoch, attempt });
        let digest = output.digest();
        let snapshot = Snapshot {
            node: node.clone(),
            epoch,
            attempt,
            input,
            context,
            output,
            prompt_history: self.prompts_used.get(&node).cloned().unwrap_or_else(|| vec![prompt]),
            reasoning_trace: resp.trace,
            diagnostics: Vec::new(),
            timestamp_nanos: self.started.elapsed().as_nanos() as u64,
        };
        let snap_key = snapshot.key();
        // No stale commit: an invalidated key must never become current.
        debug_assert!(!self.invalidated.contains(&snap_key));
        self.store.put(snapshot)?;
        self.committed.insert(node.clone(), snap_key.clone());
        self.histories
            .entry(node.clone())
            .or_insert_with(|| AttemptHistory::new(node.clone()))
            .record_attempt(attempt, epoch, digest);
        self.latest_verdicts.remove(&node);
        self.last_commit = Instant::now();
        let pre = self.slice_nanos();
        self.acct.insert(snap_key.clone(), base_acct + service_nanos + pre);
        self.commit_slice = pre;

        // Successors first: once they are in flight the assessment setup
        // below overlaps their execution instead of delaying it. Conditional
        // activation stays deterministic regardless: its decision waits on
        // upstream verdicts, not on dispatch order.
        self.dispatch_ready();
        self.maybe_assess(&node, &snap_key);
        self.process_pending().await?;
        Ok(())
    }

    fn maybe_assess(&mut self, node: &NodeId, snap_key: &SnapshotKey) {
        let Some(spec) = self.graph.node(node) else { return };
        let Some(mspec) = spec.monitor.clone() else { return };

        let parents = self.graph.parents(node);
        // A speculative child routinely commits before its parent's verdict
        // lands. The conditional gate would then always read "no upstream
        // verdict" and fire, so the decision waits for in-flight upstream
        // assessments. Execution never waits; only this decision does.
        if matches!(mspec.activation, Activation::OnLowUpstreamConfidence { .. })
            && parents.iter().any(|p| self.has_inflight(TaskKind::Assess, p))
        {
            self.deferred_assess.insert(node.clone(), snap_key.clone());
            return;
        }
        if !should_assess(&mspec.activation, &parents, &self.latest_verdicts) {
            return;
        }
        if self.registry.inflight_of(TaskKind::Assess) >= self.cfg.max_inflight_assessments {
            self.debt.dropped_assessments += 1;
            return;
        }

        let snapshot = self.store.get(snap_key).expect("just committed");
        let judge_seed = seed::derive(
            self.cfg.seed,
            &["judge", node.as_str(), &snap_key.attempt.to_string()],
        );
        let tx = self.tx.clone();
        let key_for_event = snap_key.clone();

        let handle = match self.monitors.get(node) {
            Some(ResolvedMonitor::Single { backend }) => {
                let mut assessor = Assessor::new(Arc::clone(backend), Arc::clone(&self.ledger))
                    .with_rule(self.cfg.aggregation.clone());
                assessor.cutoffs = self.cfg.cutoffs;
                assessor.timeout = self.cfg.monitor_timeout;
                let monitor_name = assessor.backend_name().to_string();
                tokio::spawn(async move {
                    let t0 = Instant::now();
                    let verdict = match assessor.assess(&snapshot, judge_seed).await {
                        Ok(v) => v,
                        Err(e) => Verdict::unavailable(&monitor_name, &e.to_string()),
                    };
                    let _ = tx.send(Event::Assessed {
                        key: key_for_event,
                        service_nanos: t0.elapsed().as_nanos() as u64,
                        verdict: Box::new(verdict),
                    });
                })
            }
            Some(ResolvedMonitor::Ensemble { spec: espec, members }) => {
                let espec = espec.clone();
                let members = members.clone();
                let rule = self.cfg.aggregation.clone();
                let cutoffs = self.cfg.cutoffs;
                let name = mspec.backend.clone();
                tokio::spawn(async move {
                    let t0 = Instant::now();
                    let req = JudgeRequest {
                        node: snapshot.node.clone(),
                        output: snapshot.output.clone(),
                        trace: snapshot.reasoning_trace.clone(),
                        context: snapshot.context.clone(),
                        seed: judge_seed,
                    };
                    let verdict = match cross_validate(&req, &espec, &members, &rule, &cutoffs).await {
                        Ok(report) => ensemble_verdict(&report, &espec, &name),
                        Err(e) => Verdict::unavailable(&name, &e.to_string()),
                    };
                    let _ = tx.send(Event::Assessed {
                        key: key_for_event,
                        service_nanos: t0.elapsed().as_nanos() as u64,
                        verdict: Box::new(verdict),
                    });
                })
            }
            None => return,
        };

        let task_key = TaskKey {
            kind: TaskKind::Assess,
            node: node.clone(),
            epoch: snap_key.epoch,
            attempt: snap_key.attempt,
        };
        self.registry.insert(task_key.clone(), handle.abort_handle());
        self.joins.insert(task_key, handle);
    }

    async fn on_assessed(&mut self, key: SnapshotKey, service_nanos: u64, verdict: Verdict) -> Result<()> {
        let task_key = TaskKey {
            kind: TaskKind::Assess,
            node: key.node.clone(),
            epoch: key.epoch,
            attempt: key.attempt,
        };
        self.registry.remove(&task_key);
        self.joins.remove(&task_key);

        let superseded = self.committed.get(&key.node) != Some(&key);
        if self.invalidated.contains(&key) || superseded {
            self.debt.stale_verdicts += 1;
            self.process_pending().await?;
            return Ok(());
        }

        let avail = self.acct.get(&key).copied().unwrap_or(0) + service_nanos;
        self.verdict_acct.insert(key.clone(), avail);
        self.store.attach_verdict(&key, verdict.clone())?;
        if let Some(h) = self.histories.get_mut(&key.node) {
            h.record_verdict(key.attempt, key.epoch, verdict.clone());
        }
        self.latest_verdicts.insert(key.node.clone(), verdict.clone());
        if verdict.unavailable {
            self.debt.unavailable_verdicts += 1;
        }

        let threshold = self
            .graph
            .node(&key.node)
            .and_then(|s| s.monitor.as_ref())
            .map_or(0.0, |m| m.threshold);
        // tau gate: a failure call weaker than the threshold is not acted on.
        let actionable = !verdict.pass && verdict.confidence >= threshold;
        if actionable {
            self.pending_failures
                .insert(key.node.clone(), PendingFailure { key, verdict });
        }

        self.process_pending().await?;
        self.drain_deferred_assessments();
        Ok(())
    }

    /// Re-examine deferred assessment decisions once a verdict has landed.
    /// Stale entries (invalidated or superseded commits) are dropped. Only
    /// in-flight assessments are waited on: a parent whose own decision is
    /// still deferred reads as settled-without-verdict and the gate fails
    /// open to assessing.
    fn drain_deferred_assessments(&mut self) {
        let entries: Vec<(NodeId, SnapshotKey)> = self
            .deferred_assess
            .iter()
            .map(|(n, k)| (n.clone(), k.clone()))
            .collect();
        for (node, key) in entries {
            let current =
                self.committed.get(&node) == Some(&key) && !self.invalidated.contains(&key);
            if !current {
                self.deferred_assess.remove(&node);
                continue;
            }
            let settled = self
                .graph
                .parents(&node)
                .iter()
                .all(|p| !self.has_inflight(TaskKind::Assess, p));
            if settled {
                self.deferred_assess.remove(&node);
                self.maybe_assess(&node, &key);
            }
        }
    }

    /// Act on pending failing verdicts, upstream-first. A failure is only
    /// eligible once every ancestor has settled: committed, unassessed or
    /// assessed clean, nothing in flight. This makes the correction sequence
    /// independent of verdict arrival order.
    async fn process_pending(&mut self) -> Result<()> {
        loop {
            // Discard entries whose snapshot got invalidated since arrival.
            let stale: Vec<NodeId> = self
                .pending_failures
                .iter()
                .filter(|(node, p)| {
                    self.invalidated.contains(&p.key) || self.committed.get(*node) != Some(&p.key)
                })
                .map(|(n, _)| n.clone())
                .collect();
            for node in stale {
                self.pending_failures.remove(&node);
                self.debt.stale_verdicts += 1;
            }

            let mut eligible: Option<NodeId> = None;
            let mut pending_order: Vec<&NodeId> = self.pending_failures.keys().collect();
            pending_order.sort_by_key(|n| self.positions.get(*n).copied().unwrap_or(usize::MAX));
            for node in pending_order {
                if self.ancestors_resolved(node) {
                    eligible = Some(node.clone());
                    break;
                }
            }
            let Some(node) = eligible else { return Ok(()) };
            let pending = self.pending_failures.remove(&node).expect("picked from map");
            self.act_on_failure(node, pending).await?;
        }
    }

    fn ancestors_resolved(&self, node: &NodeId) -> bool {
        self.graph.ancestors(node).iter().all(|a| {
            self.committed_valid(a).is_some()
                && !self.has_inflight(TaskKind::Assess, a)
                && !self.has_inflight(TaskKind::Generate, a)
                && !self.pending_failures.contains_key(a)
        })
    }

    async fn act_on_failure(&mut self, node: NodeId, pending: PendingFailure) -> Result<()> {
        let mspec = self
            .graph
            .node(&node)
            .and_then(|s| s.monitor.clone())
            .ok_or_else(|| Error::Config(format!("verdict for unmonitored node {node}")))?;
        let history = self
            .histories
            .get(&node)
            .cloned()
            .ok_or_else(|| Error::Config(format!("verdict for unexecuted node {node}")))?;

        match route_verdict(&history, &pending.verdict, mspec.max_corrections) {
            RouteDecision::Accept => Ok(()),
            RouteDecision::Correct => self.apply_correction(node, pending, &mspec, &history).await,
            RouteDecision::GiveUp => self.apply_give_up(node, pending, &history).await,
        }
    }

    async fn apply_correction(
        &mut self,
        node: NodeId,
        pending: PendingFailure,
        mspec: &MonitorSpec,
        history: &AttemptHistory,
    ) -> Result<()> {
        let request = CorrectionRequest { target: pending.key.clone(), verdict: pending.verdict.clone() };
        let mut plan = match plan_rollback(self.store, history, &request, &self.cfg.augment) {
            Ok(plan) => plan,
            Err(Error::SnapshotNotFound(_)) => {
                // The failing snapshot was pruned; correcting blind would
                // lose the contextual part of the rollback. Keep the output
                // and mark the run degraded instead.
                self.degraded = true;
                return Ok(());
            }
            Err(e) => return Err(e),
        };

        if mspec.mode == MonitorMode::Reflect {
            if let Some(window_context) = self.reflect_window(&node, history) {
                plan.augmented_prompt.push_str("\n\n");
                plan.augmented_prompt.push_str(&window_context);
            }
        }

        self.bump_epoch_and_invalidate(&node).await;

        self.attempt_counter.insert(node.clone(), plan.next_attempt);
        self.override_prompt.insert(node.clone(), plan.augmented_prompt.clone());
        self.seed_offset.insert(node.clone(), plan.perturbation.seed_offset);
        self.temp_delta.insert(node.clone(), plan.perturbation.temperature_delta);
        // Waiting out the failing verdict is on the corrective path.
        let verdict_avail = self.verdict_acct.get(&pending.key).copied().unwrap_or(0);
        self.correction_acct.insert(node.clone(), verdict_avail);

        self.corrections.push(CorrectionEvent {
            node: node.clone(),
            failed_attempt: pending.key.attempt,
            next_attempt: plan.next_attempt,
            epoch: self.current_epoch,
            category: pending.verdict.category,
            monitor: pending.verdict.monitor.clone(),
            systematic: pending.verdict.category == ErrorCategory::Systematic,
        });

        self.dispatch_ready();
        Ok(())
    }

    /// Sliding window of this node's earlier failed (output, feedback)
    /// pairs, rendered for the correction prompt. `Reflect` mode only.
    fn reflect_window(&self, node: &NodeId, history: &AttemptHistory) -> Option<String> {
        let mut rounds = Vec::new();
        for (i, record) in history.records.iter().enumerate() {
            let Some(v) = &record.verdict else { continue };
            if v.pass || v.unavailable || v.rationale.trim().is_empty() {
                continue;
            }
            let key = SnapshotKey::new(node.clone(), record.epoch, record.attempt);
            let Ok(snapshot) = self.store.get(&key) else { continue };
            let feedback = Feedback::new(
                v.category,
                v.rationale.clone(),
                vec![TraceRef { source: key.to_string(), excerpt: snapshot.output.content.clone() }],
            )
            .ok()?;
            rounds.push(RoundState {
                round: i as u32 + 1,
                output_digest: snapshot.output.digest(),
                output: snapshot.output,
                accepted: false,
                feedback: Some(feedback),
            });
        }
        if rounds.is_empty() {
            return None;
        }
        Some(compose_context("Earlier attempts and feedback:", &rounds, DEFAULT_WINDOW).render())
    }

    async fn apply_give_up(
        &mut self,
        node: NodeId,
        pending: PendingFailure,
        history: &AttemptHistory,
    ) -> Result<()> {
        self.degraded = true;
        let best = give_up(history)?;
        if (best.epoch, best.attempt) == (pending.key.epoch, pending.key.attempt) {
            // The latest attempt is also the best one: keep its commit.
            return Ok(());
        }

        // An earlier attempt was better: bump the epoch, invalidate the
        // current lineage, and promote the old snapshot back to current.
        // The promoted key is resurrected from the invalidated set; it is
        // current again by decision, not by accident.
        let best_key = SnapshotKey::new(node.clone(), best.epoch, best.attempt);
        if !self.store.contains(&best_key) {
            return Ok(());
        }
        self.bump_epoch_and_invalidate(&node).await;
        self.invalidated.remove(&best_key);
        // The promotion only became possible once the verdict landed;
        // restamp so downstream re-runs inherit that wait.
        let verdict_avail = self.verdict_acct.get(&pending.key).copied().unwrap_or(0);
        let promoted = self.acct.get(&best_key).copied().unwrap_or(0).max(verdict_avail);
        self.acct.insert(best_key.clone(), promoted);
        self.committed.insert(node.clone(), best_key);
        self.dispatch_ready();
        Ok(())
    }

    /// The one rollback primitive: bump the epoch once, abort and await the
    /// doomed lineage's tasks, invalidate its snapshots, and clear state so
    /// readiness re-dispatches it.
    async fn bump_epoch_and_invalidate(&mut self, target: &NodeId) {
        self.current_epoch = self.current_epoch.next();
        self.rollbacks += 1;

        let cancelled = self
            .registry
            .cancel_lineage(self.graph, target, self.current_epoch);
        for key in cancelled {
            if let Some(handle) = self.joins.remove(&key) {
                // Cancelled tasks must be fully gone before any re-dispatch
                // writes; a late send lands as a stale event and is counted.
                let _ = handle.await;
            }
        }

        let mut lineage = self.graph.descendants(target);
        lineage.insert(target.clone());
        let all_keys = self.store.keys();
        for n in &lineage {
            self.min_live_epoch.insert(n.clone(), self.current_epoch);
            self.committed.remove(n);
            self.latest_verdicts.remove(n);
            self.deferred_assess.remove(n);
            if self.pending_failures.remove(n).is_some() {
                self.debt.stale_verdicts += 1;
            }
            for key in all_keys.iter().filter(|k| &k.node == n) {
                self.invalidated.insert(key.clone());
            }
        }
    }

    fn finalize(mut self) -> Result<ExecutionRecord> {
        let drain_end = Instant::now();
        let wall_nanos = self
            .last_commit
            .saturating_duration_since(self.started)
            .as_nanos() as u64;
        let monitor_drain_nanos = drain_end
            .saturating_duration_since(self.last_commit)
            .as_nanos() as u64;

        let mut completions = Vec::new();
        for node in &self.schedule {
            let key = self.committed.get(node).expect("complete run");
            debug_assert!(!self.invalidated.contains(key));
            let output = self.store.get(key)?.output;
            completions.push(CompletionEntry {
                node: node.clone(),
                epoch: key.epoch,
                attempt: key.attempt,
                output_digest: output.digest(),
            });
        }
        completions.sort_by_key(|c| (c.epoch, self.positions[&c.node]));
        let critical_path_nanos = completions
            .iter()
            .filter_map(|c| {
                self.acct
                    .get(&SnapshotKey::new(c.node.clone(), c.epoch, c.attempt))
                    .copied()
            })
            .max()
            .unwrap_or(0);

        let sinks = self.graph.sinks();
        let mut sink_outputs = BTreeMap::new();
        for sink in &sinks {
            let key = self.committed.get(sink).expect("complete run");
            sink_outputs.insert(sink.clone(), self.store.get(key)?.output);
        }
        let final_output = merge_sinks(&sinks, &sink_outputs);

        let node_attempts: BTreeMap<NodeId, u32> = self
            .schedule
            .iter()
            .map(|n| (n.clone(), self.attempt_counter.get(n).copied().unwrap_or(0) + 1))
            .collect();
        let attempts_total = node_attempts.values().map(|&a| u64::from(a)).sum();

        let prune = match self.cfg.snapshot_budget {
            Some(budget) => {
                let frontier: BTreeSet<NodeId> = sinks.iter().cloned().collect();
                Some(self.store.prune(budget, &frontier, &self.cfg.retention_preference)?)
            }
            None => None,
        };

        Ok(ExecutionRecord {
            run_id: self.cfg.run_id.clone(),
            completions,
            final_output,
            sink_outputs,
            corrections: std::mem::take(&mut self.corrections),
            rollbacks: self.rollbacks,
            degraded: self.degraded,
            final_epoch: self.current_epoch,
            attempts_total,
            node_attempts,
            critical_path_nanos,
            wall_nanos,
            monitor_drain_nanos,
            dispatch_nanos: self.dispatch_nanos,
            debt: self.debt,
            prune,
        })
    }
}

/// Canonical node input: the external input for sources, the single parent
/// payload for one parent, or a deterministic merge across parents.
fn merge_inputs(
    run_input: &Payload,
    parents: &[NodeId],
    context: &BTreeMap<String, Payload>,
) -> Payload {
    match parents.len() {
        0 => run_input.clone(),
        1 => context[parents[0].as_str()].clone(),
        _ => {
            let mut ordered: Vec<&Payload> = Vec::new();
            for (_, p) in context.iter() {
                ordered.push(p);
            }
            let content = ordered
                .iter()
                .map(|p| p.content.as_str())
                .collect::<Vec<_>>()
                .join("\n");
            let mut merged = Payload::text(content);
            let values: Vec<f64> = ordered.iter().filter_map(|p| p.value()).collect();
            if values.len() == ordered.len() {
                merged
                    .structured
                    .insert("value".to_string(), Scalar::Float(values.iter().sum()));
            }
            merged
        }
    }
}

fn merge_sinks(sinks: &[NodeId], outputs: &BTreeMap<NodeId, Payload>) -> Payload {
    if sinks.len() == 1 {
        return outputs[&sinks[0]].clone();
    }
    let ordered: Vec<&Payload> = sinks.iter().map(|s| &outputs[s]).collect();
    let content = ordered
        .iter()
        .map(|p| p.content.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let mut merged = Payload::text(content);
    let values: Vec<f64> = ordered.iter().filter_map(|p| p.value()).collect();
    if !ordered.is_empty() && values.len() == ordered.len() {
        merged
            .structured
            .insert("value".to_string(), Scalar::Float(values.iter().sum()));
    }
    merged
}

fn render_prompt(
    template: &str,
    run_input: &Payload,
    context: &BTreeMap<String, Payload>,
) -> String {
    let mut out = template.to_string();
    for ph in crate::graph::placeholders(template) {
        let value = if ph == "input" {
            Some(&run_input.content)
        } else {
            context.get(&ph).map(|p| &p.content)
        };
        if let Some(v) = value {
            out = out.replace(&format!("{{{ph}}}"), v);
        }
    }
    out.replace("{{", "{").replace("}}", "}")
}

/// Collapse an ensemble report into one verdict for the routing machinery.
fn ensemble_verdict(
    report: &crate::ensemble::DisagreementReport,
    spec: &EnsembleSpec,
    name: &str,
) -> Verdict {
    let decision = match escalate_decision(report, spec) {
        Ok(d) => d,
        Err(e) => return Verdict::unavailable(name, &e.to_string()),
    };

    let failing: Vec<&crate::ensemble::MemberVerdict> = report
        .member_verdicts
        .iter()
        .filter(|m| !m.verdict.pass)
        .collect();

    match decision {
        EscalationDecision::Accept => Verdict {
            pass: true,
            category: ErrorCategory::None,
            confidence: 1.0 - report.disagreement,
            rationale: "ensemble agreement".to_string(),
            dimensions: DimensionScores::perfect(),
            monitor: name.to_string(),
            unavailable: false,
        },
        EscalationDecision::Correct | EscalationDecision::FlagSystematic => {
            let category = if decision == EscalationDecision::FlagSystematic {
                ErrorCategory::Systematic
            } else if report.majority_category != ErrorCategory::None {
                report.majority_category
            } else {
                // Split at the cutoff with a passing majority: charge the
                // gravest category the failing side reported.
                failing
                    .iter()
                    .map(|m| m.verdict.category)
                    .min()
                    .unwrap_or(ErrorCategory::Content)
            };
            let confidence = if failing.is_empty() {
                0.5
            } else {
                failing.iter().map(|m| m.verdict.confidence).sum::<f64>() / failing.len() as f64
            };
            let rationale = failing
                .first()
                .map(|m| format!("{} ({})", m.verdict.rationale, m.member))
                .unwrap_or_else(|| "ensemble split".to_string());
            let dimensions = failing
                .first()
                .map(|m| m.verdict.dimensions)
                .unwrap_or_else(DimensionScores::perfect);
            Verdict {
                pass: false,
                category,
                confidence,
                rationale,
                dimensions,
                monitor: name.to_string(),
                unavailable: false,
            }
        }
    }
}

/// Run one workflow to completion with a fresh in-memory store.
pub async fn run_workflow(
    graph: Arc<WorkflowGraph>,
    backends: Arc<BackendRegistry>,
    cfg: &RunConfig,
) -> Result<ExecutionRecord> {
    let store = Arc::new(SnapshotStore::in_memory());
    Executor::new(graph, backends, store).run(cfg).await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::sim::{
        mul_chain_spec, NodeErrorModel, OracleJudge, PerturbationKind, SimAgent, Truth,
    };
    use crate::graph::{linear_chain, Activation};

    fn chain_setup(
        n: usize,
        errors: BTreeMap<NodeId, NodeErrorModel>,
        monitored: bool,
    ) -> (Arc<WorkflowGraph>, Arc<BackendRegistry>) {
        let monitor = monitored.then(|| MonitorSpec {
            backend: "oracle".to_string(),
            threshold: 0.7,
            max_corrections: 3,
            mode: MonitorMode::Single,
            activation: Activation::Always,
        });
        let graph = linear_chain(n, "sim", monitor);
        let spec = mul_chain_spec(&graph, 2.0, 1.0);
        let truth = spec.ground_truth(&graph).unwrap();

        let mut registry = BackendRegistry::new();
        registry.register_agent(Arc::new(SimAgent::new("sim", spec).with_errors(errors)));
        registry.register_monitor(Arc::new(OracleJudge::new(
            "oracle",
            "reference",
            Truth::PerNode(truth),
        )));
        (Arc::new(graph), Arc::new(registry))
    }

    fn run_input() -> Payload {
        Payload::with_value("value: 1", 1.0)
    }

    #[tokio::test]
    async fn clean_chain_completes_with_exact_output() {
        let (graph, backends) = chain_setup(4, BTreeMap::new(), true);
        let cfg = RunConfig::new("t", 7, run_input());
        let record = run_workflow(graph, backends, &cfg).await.unwrap();

        // 1 * 2^4 = 16.
        assert_eq!(record.final_output.value(), Some(16.0));
        assert_eq!(record.rollbacks, 0);
        assert_eq!(record.final_epoch, Epoch(0));
        assert!(!record.degraded);
        assert_eq!(record.completions.len(), 4);
        assert!(record.completions.iter().all(|c| c.attempt == 0));
        assert_eq!(record.attempts_total, 4);
        assert!(record.corrections.is_empty());
    }

    #[tokio::test]
    async fn single_error_is_corrected_and_counted() {
        let errors = BTreeMap::from([(
            NodeId::new("n01"),
            NodeErrorModel::always(PerturbationKind::ValueScale, 0.5).first_attempt_only(),
        )]);
        let (graph, backends) = chain_setup(4, errors, true);
        let cfg = RunConfig::new("t", 7, run_input());
        let record = run_workflow(graph, backends, &cfg).await.unwrap();

        assert_eq!(record.final_output.value(), Some(16.0));
        assert_eq!(record.rollbacks, 1);
        assert_eq!(record.final_epoch, Epoch(1));
        assert_eq!(record.corrections.len(), 1);
        assert_eq!(record.corrections[0].node, NodeId::new("n01"));
        assert_eq!(record.corrections[0].category, ErrorCategory::Content);
        assert_eq!(record.node_attempts[&NodeId::new("n01")], 2);
        // Descendants re-ran but did not gain attempts.
        assert_eq!(record.node_attempts[&NodeId::new("n02")], 1);
        assert_eq!(record.node_attempts[&NodeId::new("n03")], 1);
        assert!(!record.degraded);
        // Invariant: rollbacks equals the final epoch.
        assert_eq!(record.rollbacks, record.final_epoch.0);
    }

    #[tokio::test]
    async fn unmonitored_chain_propagates_the_error() {
        let errors = BTreeMap::from([(
            NodeId::new("n00"),
            NodeErrorModel::always(PerturbationKind::ValueScale, 0.5),
        )]);
        let (graph, backends) = chain_setup(3, errors, false);
        let cfg = RunConfig::new("t", 7, run_input());
        let record = run_workflow(graph, backends, &cfg).await.unwrap();

        // 1 * 2 * 1.5 propagated through two more doublings: 12 not 8.
        assert_eq!(record.final_output.value(), Some(12.0));
        assert_eq!(record.rollbacks, 0);
    }

    #[tokio::test]
    async fn budget_exhaustion_gives_up_degraded() {
        // Error fires on every attempt: correction can never win.
        let errors = BTreeMap::from([(
            NodeId::new("n00"),
            NodeErrorModel::always(PerturbationKind::ValueScale, 0.5),
        )]);
        let (graph, backends) = chain_setup(2, errors, true);
        let cfg = RunConfig::new("t", 7, run_input());
        let record = run_workflow(graph, backends, &cfg).await.unwrap();

        assert!(record.degraded);
        // R = 3 corrections, then give up: 4 attempts at n00. n01 then
        // inherits the wrong input, fails against its own truth, and burns
        // its own budget too before giving up: 6 corrections in total.
        assert_eq!(record.node_attempts[&NodeId::new("n00")], 4);
        assert_eq!(record.node_attempts[&NodeId::new("n01")], 4);
        assert_eq!(record.corrections.len(), 6);
        // The wrong value is committed anyway.
        assert_eq!(record.final_output.value(), Some(6.0));
        assert_eq!(record.rollbacks, record.final_epoch.0);
    }

    #[tokio::test]
    async fn same_seed_runs_replay_identically() {
        let errors = || {
            BTreeMap::from([
                (
                    NodeId::new("n01"),
                    NodeErrorModel {
                        probability: 0.5,
                        magnitude: 0.3,
                        kind: PerturbationKind::ValueScale,
                        signed: false,
                        only_attempts: None,
                    },
                ),
                (
                    NodeId::new("n03"),
                    NodeErrorModel {
                        probability: 0.5,
                        magnitude: 0.2,
                        kind: PerturbationKind::DigitFlip,
                        signed: false,
                        only_attempts: None,
                    },
                ),
            ])
        };
        for seed in [1u64, 2, 3, 4, 5] {
            let (graph_a, backends_a) = chain_setup(5, errors(), true);
            let (graph_b, backends_b) = chain_setup(5, errors(), true);
            let cfg = RunConfig::new("t", seed, run_input());
            let a = run_workflow(graph_a, backends_a, &cfg).await.unwrap();
            let b = run_workflow(graph_b, backends_b, &cfg).await.unwrap();
            assert_eq!(a.replay_view(), b.replay_view(), "seed {seed}");
        }
    }

    #[tokio::test]
    async fn backend_outage_aborts_the_run() {
        use crate::backends::chaos::{ChaosAgent, ChaosSpec};
        let (graph, _) = chain_setup(3, BTreeMap::new(), false);
        let spec = mul_chain_spec(&graph, 2.0, 1.0);
        let mut registry = BackendRegistry::new();
        registry.register_agent(Arc::new(ChaosAgent::new(
            Arc::new(SimAgent::new("inner", spec)),
            ChaosSpec::failing(1.0),
        )));
        // The chaos wrapper renames itself; rebuild the graph against it.
        let graph = Arc::new(linear_chain(3, "chaos:inner", None));
        let cfg = RunConfig::new("t", 7, run_input());
        let err = run_workflow(graph, Arc::new(registry), &cfg).await;
        assert!(matches!(err, Err(Error::NodeAborted { .. })));
    }

    #[tokio::test]
    async fn diamond_merges_parent_values() {
        use crate::backends::sim::{ArithOp, SimTaskSpec};
        use crate::graph::NodeSpec;
        let mut graph = WorkflowGraph::new();
        for (id, template) in [
            ("a", "{input}"),
            ("b", "{a}"),
            ("c", "{a}"),
            ("d", "{b} {c}"),
        ] {
            graph.add_node(NodeSpec {
                id: NodeId::new(id),
                backend: "sim".to_string(),
                prompt_template: template.to_string(),
                monitor: None,
            });
        }
        graph.add_edge("a", "b");
        graph.add_edge("a", "c");
        graph.add_edge("b", "d");
        graph.add_edge("c", "d");
        let spec = SimTaskSpec {
            ops: BTreeMap::from([
                (NodeId::new("a"), ArithOp::Add(1.0)),
                (NodeId::new("b"), ArithOp::Mul(2.0)),
                (NodeId::new("c"), ArithOp::Mul(3.0)),
                (NodeId::new("d"), ArithOp::Add(0.0)),
            ]),
            input: 1.0,
        };
        let truth = spec.ground_truth(&graph).unwrap();
        assert_eq!(truth[&NodeId::new("d")], 10.0);

        let mut registry = BackendRegistry::new();
        registry.register_agent(Arc::new(SimAgent::new("sim", spec)));
        let cfg = RunConfig::new("t", 3, run_input());
        let record = run_workflow(Arc::new(graph), Arc::new(registry), &cfg)
            .await
            .unwrap();
        assert_eq!(record.final_output.value(), Some(10.0));
    }

    fn delayed_setup(
        n: usize,
        errors: BTreeMap<NodeId, NodeErrorModel>,
        node_ms: u64,
        judge_ms: u64,
    ) -> (Arc<WorkflowGraph>, Arc<BackendRegistry>) {
        let monitor = MonitorSpec {
            backend: "oracle".to_string(),
            threshold: 0.7,
            max_corrections: 3,
            mode: MonitorMode::Single,
            activation: Activation::Always,
        };
        let graph = linear_chain(n, "sim", Some(monitor));
        let spec = mul_chain_spec(&graph, 2.0, 1.0);
        let truth = spec.ground_truth(&graph).unwrap();
        let mut registry = BackendRegistry::new();
        registry.register_agent(Arc::new(
            SimAgent::new("sim", spec)
                .with_errors(errors)
                .with_delay(Duration::from_millis(node_ms)),
        ));
        registry.register_monitor(Arc::new(
            OracleJudge::new("oracle", "reference", Truth::PerNode(truth))
                .with_delay(Duration::from_millis(judge_ms)),
        ));
        (Arc::new(graph), Arc::new(registry))
    }

    #[tokio::test]
    async fn accounted_path_covers_services_but_not_overlapped_judging() {
        let (graph, backends) = delayed_setup(3, BTreeMap::new(), 5, 10);
        let cfg = RunConfig::new("t", 7, run_input());
        let record = run_workflow(graph, backends, &cfg).await.unwrap();

        assert!(!record.degraded);
        // Three 5ms services in sequence: at least 15ms on the path.
        assert!(record.critical_path_nanos >= 15_000_000, "{}", record.critical_path_nanos);
        // Clean verdicts never gate anything, so the three 10ms judge
        // waits must not be charged; they would exceed the wall alone.
        let slack = 2_000_000;
        assert!(
            record.critical_path_nanos <= record.wall_nanos + slack,
            "{} vs wall {}",
            record.critical_path_nanos,
            record.wall_nanos
        );
        // The last assessment resolves after the last commit.
        assert!(record.monitor_drain_nanos >= 8_000_000, "{}", record.monitor_drain_nanos);
    }

    #[tokio::test]
    async fn correction_charges_verdict_wait_and_reexecution() {
        let errors = BTreeMap::from([(
            NodeId::new("n00"),
            NodeErrorModel::always(PerturbationKind::ValueScale, 0.5).first_attempt_only(),
        )]);
        let (graph, backends) = delayed_setup(2, errors, 5, 10);
        let cfg = RunConfig::new("t", 7, run_input());
        let record = run_workflow(graph, backends, &cfg).await.unwrap();

        assert_eq!(record.corrections.len(), 1);
        assert_eq!(record.final_output.value(), Some(4.0));
        // Failed n00 (5ms), its verdict (10ms), corrected n00 (5ms), then
        // n01 on the corrected input (5ms): 25ms is causally forced.
        assert!(record.critical_path_nanos >= 25_000_000, "{}", record.critical_path_nanos);
        let total = record.wall_nanos + record.monitor_drain_nanos + 2_000_000;
        assert!(record.critical_path_nanos <= total, "{} vs {}", record.critical_path_nanos, total);
    }

    #[tokio::test]
    async fn prune_at_end_respects_budget() {
        let errors = BTreeMap::from([(
            NodeId::new("n01"),
            NodeErrorModel::always(PerturbationKind::ValueScale, 0.5).first_attempt_only(),
        )]);
        let (graph, backends) = chain_setup(4, errors, true);
        let mut cfg = RunConfig::new("t", 7, run_input());
        cfg.snapshot_budget = Some(3);
        let store = Arc::new(SnapshotStore::in_memory());
        let exec = Executor::new(graph, backends, Arc::clone(&store));
        let record = exec.run(&cfg).await.unwrap();

        assert_eq!(store.len(), 3);
        let prune = record.prune.unwrap();
        assert_eq!(prune.retained.len(), 3);
        // The sink's latest snapshot must be among the survivors.
        assert!(prune.retained.iter().any(|k| k.node == NodeId::new("n03")));
    }
}
