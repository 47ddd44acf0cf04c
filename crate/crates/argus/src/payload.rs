use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Rollback generation counter. Bumped exactly once per applied rollback;
/// work belonging to an older epoch that descends from a rollback target is
/// stale and must never reach a commit.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Epoch(pub u64);

impl Epoch {
    pub fn next(self) -> Epoch {
        Epoch(self.0 + 1)
    }
}

impl std::fmt::Display for Epoch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Where a payload came from: the producing node and the epoch and attempt
/// of the execution that produced it. `None` provenance marks the external
/// workflow input.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub node: crate::graph::NodeId,
    pub epoch: Epoch,
    pub attempt: u32,
}

/// A value flowing along an edge: opaque content plus optional named scalars
/// for structural checks. Content is always present (possibly empty for an
/// omitted answer); scalar maps are ordered so serialization is stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub content: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub structured: BTreeMap<String, Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Flag(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl Payload {
    pub fn text(content: impl Into<String>) -> Payload {
        Payload {
            content: content.into(),
            structured: BTreeMap::new(),
            provenance: None,
        }
    }

    pub fn with_value(content: impl Into<String>, value: f64) -> Payload {
        let mut structured = BTreeMap::new();
        structured.insert("value".to_string(), Scalar::Float(value));
        Payload {
            content: content.into(),
            structured,
            provenance: None,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self.structured.get("value") {
            Some(Scalar::Float(v)) => Some(*v),
            Some(Scalar::Int(v)) => Some(*v as f64),
            _ => None,
        }
    }

    /// Stable content digest used for avoid-lists and oscillation checks.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.content.as_bytes());
        for (k, v) in &self.structured {
            h.update(k.as_bytes());
            h.update(serde_json::to_vec(v).expect("scalar serializes"));
        }
        let out = h.finalize();
        let mut s = String::with_capacity(16);
        for b in &out[..8] {
            use std::fmt::Write;
            write!(s, "{b:02x}").unwrap();
        }
        s
    }
}
