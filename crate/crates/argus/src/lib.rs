//! Workflow runtime with asynchronous output monitoring and epoch-versioned
//! rollback.
//!
//! A workflow is a DAG of agent-backed nodes. Nodes execute speculatively:
//! when a node finishes, its output is committed to a snapshot store and its
//! children dispatch immediately, while an optional monitor assesses the
//! output off the critical path. A failing assessment triggers a contextual
//! rollback: the epoch counter is bumped, stale descendant work is cancelled,
//! and the node re-runs from its snapshot with an augmented prompt and a
//! perturbed decoding seed. Repeated failures escalate through a bounded
//! reflection loop and, optionally, a heterogeneous verification ensemble,
//! before the run gives up and commits its best attempt flagged as degraded.

pub mod backends;
pub mod binding;
pub mod config;
pub mod correction;
pub mod ensemble;
pub mod error;
pub mod executor;
pub mod graph;
pub mod metrics;
pub mod monitor;
pub mod payload;
pub mod reflection;
pub mod retention;
pub mod seed;
pub mod snapshot;
pub mod store;
pub mod suites;

pub use error::{Error, Result};
pub use graph::{NodeId, NodeSpec, WorkflowGraph};
pub use payload::{Epoch, Payload, Provenance};
pub use snapshot::{Snapshot, SnapshotKey};
