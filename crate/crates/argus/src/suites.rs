//! Benchmark suites: seeded simulation experiments with built-in pass/fail
//! criteria. Each suite derives per-trial seeds from the master seed via
//! `seed::derive(master, ["<suite tag>", trial])`, so any trial can be
//! reproduced in isolation.
//!
//! Wall-clock criteria report only whether the budget held; all other
//! reported measurements are deterministic functions of the seed.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt, TryStreamExt};

use crate::backends::sim::{
    mul_chain_spec, BiasedJudge, NodeErrorModel, OracleJudge, PerturbationKind, SimActModel,
    SimAgent, Truth,
};
use crate::backends::{BackendRegistry, JudgeRequest, MonitorBackend};
use crate::ensemble::{
    escalate_decision, fold_report, EnsembleSpec, EscalationDecision, MemberSpec, MemberVerdict,
};
use crate::error::{Error, Result};
use crate::executor::{run_workflow, ExecutionRecord, RunConfig};
use crate::graph::{linear_chain, Activation, MonitorMode, MonitorSpec, NodeId};
use crate::monitor::{DimensionCutoffs, DimensionScores, ErrorCategory, Verdict};
use crate::payload::Payload;
use crate::reflection::{
    estimate_acceptance, run_reflection, ReflectionConfig, ReflectionOutcome,
};
use crate::seed;

pub const SUITE_NAMES: [&str; 5] = [
    "propagation",
    "convergence",
    "overhead",
    "amortized",
    "hcv-blindspot",
];

/// Knobs shared by the suites; unset fields fall back to each suite's
/// documented defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteParams {
    pub n: Option<usize>,
    pub eps: Option<f64>,
    pub trials: Option<usize>,
    pub seed: u64,
}

impl Default for SuiteParams {
    fn default() -> SuiteParams {
        SuiteParams { n: None, eps: None, trials: None, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub suite: String,
    pub criteria: Vec<CriterionResult>,
    pub wall: Duration,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn lines(&self) -> Vec<String> {
        self.criteria
            .iter()
            .map(|c| {
                format!(
                    "{} {}/{}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    self.suite,
                    c.name,
                    c.detail
                )
            })
            .collect()
    }
}

fn criterion(name: &str, passed: bool, detail: String) -> CriterionResult {
    CriterionResult { name: name.to_string(), passed, detail }
}

fn wall_criterion(started: Instant, budget: Duration) -> CriterionResult {
    let elapsed = started.elapsed();
    criterion(
        "runtime",
        elapsed <= budget,
        if elapsed <= budget {
            format!("within {}s budget", budget.as_secs())
        } else {
            format!("exceeded {}s budget: {:.1}s", budget.as_secs(), elapsed.as_secs_f64())
        },
    )
}

pub async fn run_suite(name: &str, params: &SuiteParams) -> Result<SuiteOutcome> {
    match name {
        "propagation" => propagation(params).await,
        "convergence" => convergence(params).await,
        "overhead" => overhead(params).await,
        "amortized" => amortized(params).await,
        "hcv-blindspot" => hcv_blindspot(params).await,
        other => Err(Error::Config(format!(
            "unknown suite `{other}`; known suites: {}",
            SUITE_NAMES.join(", ")
        ))),
    }
}

/// Multiplicative worst-case degradation factor for a chain whose stage i
/// introduces relative error at most eps[i].
pub fn error_bound(eps: &[f64]) -> f64 {
    eps.iter().fold(1.0, |acc, e| acc * (1.0 + e))
}

/// Linear chain of identity stages over value 1.0, so the final value is
/// exactly the product of injected per-node error factors.
#[derive(Debug, Clone)]
struct ChainFixture {
    n: usize,
    error: Option<NodeErrorModel>,
    monitored: bool,
    max_corrections: u32,
    node_delay: Duration,
    judge_delay: Duration,
}

impl ChainFixture {
    fn clean(n: usize) -> ChainFixture {
        ChainFixture {
            n,
            error: None,
            monitored: false,
            max_corrections: 3,
            node_delay: Duration::ZERO,
            judge_delay: Duration::ZERO,
        }
    }

    async fn run(&self, run_seed: u64) -> Result<ExecutionRecord> {
        let monitor = self.monitored.then(|| MonitorSpec {
            backend: "suite-judge".to_string(),
            threshold: 0.7,
            max_corrections: self.max_corrections,
            mode: MonitorMode::Single,
            activation: Activation::Always,
        });
        let graph = linear_chain(self.n, "suite-sim", monitor);
        let spec = mul_chain_spec(&graph, 1.0, 1.0);
        let truth = spec.ground_truth(&graph)?;

        let mut agent = SimAgent::new("suite-sim", spec);
        if let Some(model) = &self.error {
            let errors: BTreeMap<NodeId, NodeErrorModel> = graph
                .nodes()
                .map(|n| (n.id.clone(), model.clone()))
                .collect();
            agent = agent.with_errors(errors);
        }
        if !self.node_delay.is_zero() {
            agent = agent.with_delay(self.node_delay);
        }

        let mut registry = BackendRegistry::new();
        registry.register_agent(Arc::new(agent));
        if self.monitored {
            let mut judge = OracleJudge::new("suite-judge", "reference", Truth::PerNode(truth));
            if !self.judge_delay.is_zero() {
                judge = judge.with_delay(self.judge_delay);
            }
            registry.register_monitor(Arc::new(judge));
        }

        let cfg = RunConfig::new(
            format!("chain-{run_seed}"),
            run_seed,
            Payload::with_value("value: 1", 1.0),
        );
        run_workflow(Arc::new(graph), Arc::new(registry), &cfg).await
    }
}

fn final_rel_err(record: &ExecutionRecord) -> f64 {
    match record.final_output.value() {
        Some(v) => (v - 1.0).abs(),
        None => f64::INFINITY,
    }
}

async fn run_trials(fixture: &ChainFixture, master: u64, tag: &str, trials: usize) -> Result<Vec<ExecutionRecord>> {
    stream::iter((0..trials).map(|i| {
        let seed = seed::derive(master, &[tag, &i.to_string()]);
        fixture.run(seed)
    }))
    .buffered(16)
    .try_collect()
    .await
}

/// Error snowballing through an unmonitored chain stays within the
/// multiplicative bound; one round of oracle-monitored correction per node
/// collapses it to near zero.
pub async fn propagation(params: &SuiteParams) -> Result<SuiteOutcome> {
    let started = Instant::now();
    let n = params.n.unwrap_or(10);
    let eps = params.eps.unwrap_or(0.05);
    let trials = params.trials.unwrap_or(1000);
    let mut criteria = Vec::new();

    criteria.push(criterion(
        "bound-empty",
        error_bound(&[]) == 1.0,
        "empty chain bound is exactly 1.0".to_string(),
    ));
    let pair = error_bound(&[0.1, 0.2]);
    criteria.push(criterion(
        "bound-pair",
        (pair - 1.32).abs() <= 1e-12,
        format!("bound([0.1, 0.2]) = {pair:.6}, expected 1.32"),
    ));
    let ten = error_bound(&[0.05; 10]);
    criteria.push(criterion(
        "bound-ten",
        (ten - 1.62889).abs() <= 1e-5,
        format!("bound([0.05; 10]) = {ten:.6}, expected 1.62889 within 1e-5"),
    ));

    let bound = error_bound(&vec![eps; n]) - 1.0;

    // Worst case: every node inflates by exactly +eps; the final deviation
    // must attain the bound itself.
    let worst_fixture = ChainFixture {
        error: Some(NodeErrorModel::always(PerturbationKind::ValueScale, eps)),
        ..ChainFixture::clean(n)
    };
    let worst = worst_fixture
        .run(seed::derive(params.seed, &["prop-worst", "0"]))
        .await?;
    let worst_dev = final_rel_err(&worst);
    criteria.push(criterion(
        "worst-case-attains-bound",
        (worst_dev - bound).abs() <= 1e-9,
        format!("all-plus chain deviation {worst_dev:.6} vs bound {bound:.6}"),
    ));

    // Signed errors: every trial must stay within the bound (plus the
    // Monte-Carlo margin), and so must the mean.
    let signed_model = NodeErrorModel {
        signed: true,
        ..NodeErrorModel::always(PerturbationKind::ValueScale, eps)
    };
    let uncorrected_fixture =
        ChainFixture { error: Some(signed_model.clone()), ..ChainFixture::clean(n) };
    let uncorrected = run_trials(&uncorrected_fixture, params.seed, "prop-uncorr", trials).await?;
    let devs: Vec<f64> = uncorrected.iter().map(final_rel_err).collect();
    let mean_dev = devs.iter().sum::<f64>() / devs.len().max(1) as f64;
    let max_dev = devs.iter().cloned().fold(0.0, f64::max);
    let margin = bound * 1.05;
    criteria.push(criterion(
        "uncorrected-within-bound",
        mean_dev <= margin && max_dev <= margin,
        format!(
            "{trials} trials: mean deviation {mean_dev:.5}, max {max_dev:.5}, allowed {margin:.5}"
        ),
    ));

    // Same chain under oracle monitoring: first-attempt errors are corrected
    // and the propagated degradation disappears.
    let transient = NodeErrorModel {
        signed: true,
        ..NodeErrorModel::always(PerturbationKind::ValueScale, eps).first_attempt_only()
    };
    let corrected_fixture = ChainFixture {
        error: Some(transient),
        monitored: true,
        ..ChainFixture::clean(n)
    };
    let corrected = run_trials(&corrected_fixture, params.seed, "prop-corr", trials).await?;
    let corr_devs: Vec<f64> = corrected.iter().map(final_rel_err).collect();
    let corr_mean = corr_devs.iter().sum::<f64>() / corr_devs.len().max(1) as f64;
    let corrections: u64 = corrected.iter().map(|r| r.corrections.len() as u64).sum();
    criteria.push(criterion(
        "corrected-error-small",
        corr_mean < 0.01,
        format!(
            "mean corrected deviation {corr_mean:.6} over {trials} trials ({corrections} corrections applied)"
        ),
    ));

    criteria.push(wall_criterion(started, Duration::from_secs(30)));
    Ok(SuiteOutcome { suite: "propagation".to_string(), criteria, wall: started.elapsed() })
}

/// Reflection negotiation against an act model whose acceptance probability
/// rises by delta each round: terminates fast, matches the analytic
/// per-round acceptance curve, and the frozen negative control always
/// escalates.
pub async fn convergence(params: &SuiteParams) -> Result<SuiteOutcome> {
    let started = Instant::now();
    let trials = params.trials.unwrap_or(1000);
    let target = 42.0;
    let pi1 = 0.2;
    let delta = 0.1;
    // pi_t = min(pi1 + delta (t-1), 1) reaches 1.0 at round 9.
    let max_rounds = 9;
    let mut criteria = Vec::new();

    let act = SimActModel::improving("conv-act", target, pi1, delta);
    let judge = OracleJudge::new("conv-judge", "reference", Truth::Fixed(target));
    let input = Payload::text("start");
    let mut transcripts = Vec::with_capacity(trials);
    for i in 0..trials {
        let cfg = ReflectionConfig {
            max_rounds,
            window: 4,
            seed: seed::derive(params.seed, &["conv", &i.to_string()]),
            temperature: 0.0,
        };
        transcripts.push(run_reflection(&cfg, "reach the target value", &input, &act, &judge).await?);
    }
    let stats = estimate_acceptance(&transcripts);

    criteria.push(criterion(
        "terminates-by-round-9",
        stats.escalation_rate == 0.0 && stats.max_rounds_observed <= max_rounds,
        format!(
            "escalation rate {:.4}, deepest negotiation round {}",
            stats.escalation_rate, stats.max_rounds_observed
        ),
    ));

    let mut worst_gap = 0.0f64;
    let mut tracks = true;
    for r in &stats.per_round {
        if r.trials == 0 {
            continue;
        }
        let analytic = (pi1 + delta * f64::from(r.round - 1)).min(1.0);
        let sd = (analytic * (1.0 - analytic) / r.trials as f64).sqrt();
        let tol = (1.96 * sd).max(0.05);
        let gap = (r.estimate - analytic).abs();
        worst_gap = worst_gap.max(gap - tol);
        if gap > tol {
            tracks = false;
        }
    }
    criteria.push(criterion(
        "acceptance-tracks-analytic",
        tracks,
        format!(
            "per-round estimates vs analytic curve over {} rounds, worst excess {:.4}",
            stats.per_round.len(),
            worst_gap.max(0.0)
        ),
    ));

    // Feedback that never improves anything: acceptance stays at zero and
    // the 5-round window forces escalation every time.
    let frozen = SimActModel::improving("frozen-act", target, 0.0, 0.0).frozen();
    let mut escalations = 0usize;
    let mut all_five_rounds = true;
    for i in 0..trials {
        let cfg = ReflectionConfig {
            max_rounds: 5,
            window: 4,
            seed: seed::derive(params.seed, &["conv-frozen", &i.to_string()]),
            temperature: 0.0,
        };
        let t = run_reflection(&cfg, "reach the target value", &input, &frozen, &judge).await?;
        if t.outcome == ReflectionOutcome::Escalated {
            escalations += 1;
        }
        if t.rounds_used() != 5 {
            all_five_rounds = false;
        }
    }
    criteria.push(criterion(
        "frozen-always-escalates",
        escalations == trials && all_five_rounds,
        format!("{escalations}/{trials} escalated after exactly 5 rounds"),
    ));

    criteria.push(wall_criterion(started, Duration::from_secs(10)));
    Ok(SuiteOutcome { suite: "convergence".to_string(), criteria, wall: started.elapsed() })
}

/// Two-sided 97.5% Student t quantile for small samples; flattens to the
/// normal value for large degrees of freedom.
fn t_975(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
        2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    match df {
        0 => f64::INFINITY,
        d if d <= 30 => TABLE[d - 1],
        _ => 1.96,
    }
}

/// Least-squares slope with its 95% confidence interval.
fn ols_slope_ci(points: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    let n = points.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let xbar = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let ybar = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - xbar).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let s2 = ss_res / (nf - 2.0);
    let se = (s2 / sxx).sqrt();
    let half = t_975(n - 2) * se;
    Some((slope, slope - half, slope + half))
}

/// Monitoring runs off the critical path: across depths, the depth
/// coefficient of added critical-path latency is statistically zero, and
/// the mean added latency per node stays under a pinned constant.
pub async fn overhead(params: &SuiteParams) -> Result<SuiteOutcome> {
    let started = Instant::now();
    let depths = [5usize, 10, 20, 40];
    let pairs = params.trials.unwrap_or(8).max(3);
    let node_delay = Duration::from_millis(2);
    let judge_delay = Duration::from_millis(5);
    let mut criteria = Vec::new();

    let fixture = |depth: usize, monitored: bool| ChainFixture {
        monitored,
        node_delay,
        judge_delay: if monitored { judge_delay } else { Duration::ZERO },
        ..ChainFixture::clean(depth)
    };

    // Warmup pair, discarded: allocator and timer-wheel first-use costs
    // land here instead of in the first measured cell.
    fixture(depths[0], true).run(seed::derive(params.seed, &["ovh-warm"])).await?;
    fixture(depths[0], false).run(seed::derive(params.seed, &["ovh-warm-base"])).await?;

    let mut points = Vec::new();
    // Depth cycles in the inner loop so background load drift spreads over
    // every depth instead of impersonating a depth effect, and the pair
    // order alternates so neither arm systematically runs on a warmer
    // runtime. Pairs stay sequential: concurrent trials would contaminate
    // the latency measurements.
    for i in 0..pairs {
        for &depth in &depths {
            let run_seed = seed::derive(params.seed, &["ovh", &depth.to_string(), &i.to_string()]);
            let monitored = fixture(depth, true);
            let baseline = fixture(depth, false);
            let (m, b) = if i % 2 == 0 {
                let m = monitored.run(run_seed).await?;
                let b = baseline.run(run_seed).await?;
                (m, b)
            } else {
                let b = baseline.run(run_seed).await?;
                let m = monitored.run(run_seed).await?;
                (m, b)
            };
            let added_ms = (m.critical_path_nanos as f64 - b.critical_path_nanos as f64) / 1e6;
            points.push((depth as f64, added_ms));
        }
    }

    let (slope, lo, hi) = ols_slope_ci(&points)
        .ok_or_else(|| Error::Config("overhead regression needs >= 3 points".into()))?;
    // Backstop against a razor-thin interval flagging an immaterial
    // constant: a slope under 50us/node is not a depth-proportional cost.
    let materiality_floor_ms = 0.05;
    criteria.push(criterion(
        "slope-ci-contains-zero",
        (lo <= 0.0 && 0.0 <= hi) || slope.abs() <= materiality_floor_ms,
        format!("added-latency slope {slope:.4} ms/node, 95% CI [{lo:.4}, {hi:.4}]"),
    ));

    let per_node: Vec<f64> = points.iter().map(|(d, y)| y / d).collect();
    let mean_per_node = per_node.iter().sum::<f64>() / per_node.len() as f64;
    let per_node_budget_ms = 1.0;
    criteria.push(criterion(
        "per-node-overhead-bounded",
        mean_per_node <= per_node_budget_ms,
        format!("mean added latency {mean_per_node:.4} ms/node, budget {per_node_budget_ms} ms"),
    ));

    criteria.push(wall_criterion(started, Duration::from_secs(60)));
    Ok(SuiteOutcome { suite: "overhead".to_string(), criteria, wall: started.elapsed() })
}

/// With per-attempt error probability p and a generous budget, attempts per
/// node follow the geometric law: mean 1/(1-p).
pub async fn amortized(params: &SuiteParams) -> Result<SuiteOutcome> {
    let started = Instant::now();
    let n = params.n.unwrap_or(10);
    let p = params.eps.unwrap_or(0.1);
    let trials = params.trials.unwrap_or(1000);
    let mut criteria = Vec::new();

    let fixture = ChainFixture {
        error: Some(NodeErrorModel {
            probability: p,
            magnitude: 0.5,
            kind: PerturbationKind::ValueScale,
            signed: false,
            only_attempts: None,
        }),
        monitored: true,
        max_corrections: 100,
        ..ChainFixture::clean(n)
    };
    let records = run_trials(&fixture, params.seed, "amort", trials).await?;

    let executions: u64 = records.iter().map(|r| r.attempts_total).sum();
    criteria.push(criterion(
        "execution-volume",
        executions >= 10_000,
        format!("{executions} monitored node executions (>= 10000 required)"),
    ));

    let mean_attempts = executions as f64 / (trials * n) as f64;
    let expected = 1.0 / (1.0 - p);
    let rel_gap = (mean_attempts - expected).abs() / expected;
    criteria.push(criterion(
        "mean-attempts-geometric",
        rel_gap <= 0.10,
        format!(
            "mean attempts/node {mean_attempts:.4} vs 1/(1-p) = {expected:.4} (gap {:.2}%)",
            rel_gap * 100.0
        ),
    ));

    let worst = records.iter().map(final_rel_err).fold(0.0, f64::max);
    let degraded = records.iter().filter(|r| r.degraded).count();
    criteria.push(criterion(
        "all-errors-corrected",
        worst <= 1e-9 && degraded == 0,
        format!("worst final deviation {worst:.2e}, {degraded} degraded runs"),
    ));

    criteria.push(wall_criterion(started, Duration::from_secs(60)));
    Ok(SuiteOutcome { suite: "amortized".to_string(), criteria, wall: started.elapsed() })
}

fn content_error_request(case: usize, master: u64, truth: f64) -> JudgeRequest {
    let wrong = truth + 1.0;
    JudgeRequest {
        node: NodeId::new("probe"),
        output: Payload::with_value(format!("value: {wrong}"), wrong),
        // The trace claims the emitted value, so logic and format check out
        // and only the content dimension is wrong.
        trace: format!("compute probe: sum {truth} -> {wrong}"),
        context: BTreeMap::new(),
        seed: seed::derive(master, &["hcv-case", &case.to_string()]),
    }
}

fn panel_spec(members: &[(&str, &str)], execution_architecture: Option<&str>) -> EnsembleSpec {
    EnsembleSpec {
        members: members
            .iter()
            .map(|(name, arch)| MemberSpec {
                backend: (*name).to_string(),
                architecture: (*arch).to_string(),
            })
            .collect(),
        execution_architecture: execution_architecture.map(String::from),
        disagreement_cutoff: 0.5,
        entropy_note: 0.75,
    }
}

async fn panel_detects(
    req: &JudgeRequest,
    spec: &EnsembleSpec,
    members: &[(MemberSpec, Arc<dyn MonitorBackend>)],
) -> Result<bool> {
    let report = crate::ensemble::cross_validate(
        req,
        spec,
        members,
        &crate::monitor::AggregationRule::Min,
        &DimensionCutoffs::default(),
    )
    .await?;
    Ok(escalate_decision(&report, spec)? != EscalationDecision::Accept)
}

fn synthetic_verdict(pass: bool, category: ErrorCategory) -> Verdict {
    Verdict {
        pass,
        category: if pass { ErrorCategory::None } else { category },
        confidence: if pass { 1.0 } else { 0.7 },
        rationale: if pass { "no issue found".into() } else { "synthetic failure".into() },
        dimensions: if pass {
            DimensionScores::perfect()
        } else {
            DimensionScores { logical_consistency: 1.0, format_compliance: 1.0, content_completeness: 0.0 }
        },
        monitor: "synthetic".to_string(),
        unavailable: false,
    }
}

/// A monitoring panel that shares the generator's blind spot misses every
/// content error; adding one architecturally different member catches all
/// of them. Plus metric sanity on random verdict vectors.
pub async fn hcv_blindspot(params: &SuiteParams) -> Result<SuiteOutcome> {
    let started = Instant::now();
    let cases = params.trials.unwrap_or(500);
    let mut criteria = Vec::new();

    let homo_spec = panel_spec(&[("blind-a", "alpha"), ("blind-b", "alpha"), ("blind-c", "alpha")], Some("alpha"));
    let hetero_spec = panel_spec(&[("blind-a", "alpha"), ("blind-b", "alpha"), ("honest", "beta")], Some("alpha"));

    let mut homo_detections = 0usize;
    let mut hetero_detections = 0usize;
    for case in 0..cases {
        let truth = 10.0 + case as f64;
        let req = content_error_request(case, params.seed, truth);
        let blind = |name: &str| -> Arc<dyn MonitorBackend> {
            Arc::new(BiasedJudge::new(OracleJudge::new(name, "alpha", Truth::Fixed(truth))))
        };
        let homo_members: Vec<(MemberSpec, Arc<dyn MonitorBackend>)> = vec![
            (homo_spec.members[0].clone(), blind("blind-a")),
            (homo_spec.members[1].clone(), blind("blind-b")),
            (homo_spec.members[2].clone(), blind("blind-c")),
        ];
        let hetero_members: Vec<(MemberSpec, Arc<dyn MonitorBackend>)> = vec![
            (hetero_spec.members[0].clone(), blind("blind-a")),
            (hetero_spec.members[1].clone(), blind("blind-b")),
            (
                hetero_spec.members[2].clone(),
                Arc::new(OracleJudge::new("honest", "beta", Truth::Fixed(truth))),
            ),
        ];
        if panel_detects(&req, &homo_spec, &homo_members).await? {
            homo_detections += 1;
        }
        if panel_detects(&req, &hetero_spec, &hetero_members).await? {
            hetero_detections += 1;
        }
    }
    criteria.push(criterion(
        "homogeneous-panel-blind",
        homo_detections == 0,
        format!("{homo_detections}/{cases} content errors flagged by the same-architecture panel"),
    ));
    criteria.push(criterion(
        "heterogeneous-panel-catches-all",
        hetero_detections == cases,
        format!("{hetero_detections}/{cases} content errors flagged once one architecture differs"),
    ));

    // Pinned 2-1 split metrics.
    let split = fold_report(
        vec![
            MemberVerdict {
                member: "a".into(),
                architecture: "alpha".into(),
                verdict: synthetic_verdict(true, ErrorCategory::None),
            },
            MemberVerdict {
                member: "b".into(),
                architecture: "alpha".into(),
                verdict: synthetic_verdict(true, ErrorCategory::None),
            },
            MemberVerdict {
                member: "c".into(),
                architecture: "beta".into(),
                verdict: synthetic_verdict(false, ErrorCategory::Content),
            },
        ],
        0,
        &panel_spec(&[("a", "alpha"), ("b", "alpha"), ("c", "beta")], Some("alpha")),
    );
    let d_ok = (split.disagreement - 2.0 / 3.0).abs() <= 1e-12;
    let h_ok = (split.entropy - 0.9183).abs() <= 1e-4;
    criteria.push(criterion(
        "split-metrics-pinned",
        d_ok && h_ok,
        format!(
            "2-1 split: disagreement {:.6} (expected 0.666667), entropy {:.4} (expected 0.9183)",
            split.disagreement, split.entropy
        ),
    ));

    // Random verdict vectors: the metrics are permutation invariant and
    // stay inside their bounds.
    use rand::seq::SliceRandom;
    use rand::Rng;
    let vectors = 1000usize;
    let mut violations = 0usize;
    let spec = panel_spec(&[("x", "alpha")], Some("alpha"));
    for i in 0..vectors {
        let mut rng = seed::rng(params.seed, &["hcv-perm", &i.to_string()]);
        let k = rng.gen_range(2..=7);
        let verdicts: Vec<MemberVerdict> = (0..k)
            .map(|j| {
                let pass: bool = rng.gen();
                let category = match rng.gen_range(0..3) {
                    0 => ErrorCategory::Logic,
                    1 => ErrorCategory::Format,
                    _ => ErrorCategory::Content,
                };
                MemberVerdict {
                    member: format!("m{j}"),
                    architecture: if rng.gen() { "alpha" } else { "beta" }.to_string(),
                    verdict: synthetic_verdict(pass, category),
                }
            })
            .collect();
        let mut shuffled = verdicts.clone();
        shuffled.shuffle(&mut rng);

        let a = fold_report(verdicts, 0, &spec);
        let b = fold_report(shuffled, 0, &spec);
        let invariant = a.disagreement == b.disagreement
            && a.entropy == b.entropy
            && a.majority_pass == b.majority_pass
            && a.majority_category == b.majority_category
            && a.systematic_flag == b.systematic_flag;
        let bounded = (0.0..=1.0).contains(&a.disagreement)
            && (-1e-12..=1.0 + 1e-12).contains(&a.entropy);
        if !invariant || !bounded {
            violations += 1;
        }
    }
    criteria.push(criterion(
        "metrics-permutation-invariant",
        violations == 0,
        format!("{violations}/{vectors} random verdict vectors violated invariance or bounds"),
    ));

    Ok(SuiteOutcome { suite: "hcv-blindspot".to_string(), criteria, wall: started.elapsed() })
}
