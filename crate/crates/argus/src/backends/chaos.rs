//! Chaos wrappers: seeded fault injection in front of any backend.
//!
//! Each call draws once from a stream keyed to the request seed and picks
//! at most one action: fail, tamper, or stall. Same seed, same fault, so
//! a resilience test that trips an outage can be replayed byte for byte.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;

use crate::backends::{
    AgentBackend, BackendError, GenerateRequest, GenerateResponse, JudgeRequest, Judgment,
    MonitorBackend,
};
use crate::payload::Payload;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChaosSpec {
    /// Probability the call fails outright with an unavailable error.
    pub fail_probability: f64,
    /// Probability the result value is corrupted (agents only).
    pub tamper_probability: f64,
    /// Probability the call stalls for `stall` before proceeding.
    pub stall_probability: f64,
    pub stall: Duration,
}

impl ChaosSpec {
    pub fn quiet() -> ChaosSpec {
        ChaosSpec {
            fail_probability: 0.0,
            tamper_probability: 0.0,
            stall_probability: 0.0,
            stall: Duration::ZERO,
        }
    }

    pub fn failing(p: f64) -> ChaosSpec {
        ChaosSpec { fail_probability: p, ..ChaosSpec::quiet() }
    }

    pub fn stalling(p: f64, stall: Duration) -> ChaosSpec {
        ChaosSpec { stall_probability: p, stall, ..ChaosSpec::quiet() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    None,
    Fail,
    Tamper,
    Stall,
}

/// One draw, partitioned into bands: fail first, then tamper, then stall.
fn draw_action(spec: &ChaosSpec, base: u64, stream: &str) -> Action {
    let mut rng = seed::rng(base, &["chaos", stream]);
    let x: f64 = rng.gen();
    if x < spec.fail_probability {
        Action::Fail
    } else if x < spec.fail_probability + spec.tamper_probability {
        Action::Tamper
    } else if x < spec.fail_probability + spec.tamper_probability + spec.stall_probability {
        Action::Stall
    } else {
        Action::None
    }
}

pub struct ChaosAgent {
    pub inner: Arc<dyn AgentBackend>,
    pub spec: ChaosSpec,
    name: String,
}

impl ChaosAgent {
    pub fn new(inner: Arc<dyn AgentBackend>, spec: ChaosSpec) -> ChaosAgent {
        let name = format!("chaos:{}", inner.name());
        ChaosAgent { inner, spec, name }
    }
}

#[async_trait]
impl AgentBackend for ChaosAgent {
    fn name(&self) -> &str {
        &self.name
    }

    async fn generate(&self, req: GenerateRequest) -> Result<GenerateResponse, BackendError> {
        match draw_action(&self.spec, req.seed, "gen") {
            Action::Fail => {
                return Err(BackendError::Unavailable("injected outage".into()));
            }
            Action::Stall => {
                tokio::time::sleep(self.spec.stall).await;
                let mut resp = self.inner.generate(req).await?;
                // An injected stall is simulated latency like any other.
                if let Some(s) = resp.simulated_nanos {
                    resp.simulated_nanos = Some(s + self.spec.stall.as_nanos() as u64);
                }
                return Ok(resp);
            }
            Action::Tamper => {
                let mut resp = self.inner.generate(req).await?;
                let wrong = resp.payload.value().map_or(f64::NAN, |v| v + 17.0);
                resp.payload = Payload::with_value(format!("value: {wrong}"), wrong);
                return Ok(resp);
            }
            Action::None => {}
        }
        self.inner.generate(req).await
    }
}

pub struct ChaosMonitor {
    pub inner: Arc<dyn MonitorBackend>,
    pub spec: ChaosSpec,
    name: String,
}

impl ChaosMonitor {
    pub fn new(inner: Arc<dyn MonitorBackend>, spec: ChaosSpec) -> ChaosMonitor {
        let name = format!("chaos:{}", inner.name());
        ChaosMonitor { inner, spec, name }
    }
}

#[async_trait]
impl MonitorBackend for ChaosMonitor {
    fn name(&self) -> &str {
        &self.name
    }

    fn architecture(&self) -> &str {
        self.inner.architecture()
    }

    async fn judge(&self, req: JudgeRequest) -> Result<Judgment, BackendError> {
        match draw_action(&self.spec, req.seed, "judge") {
            Action::Fail | Action::Tamper => {
                return Err(BackendError::Unavailable("injected outage".into()));
            }
            Action::Stall => tokio::time::sleep(self.spec.stall).await,
            Action::None => {}
        }
        self.inner.judge(req).await
    }
}
