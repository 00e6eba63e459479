//! Per-iteration metrics rows shared by the in-process runner and the
//! node daemon. Field order matches the CSV column order.

use serde::{Deserialize, Serialize};

use crate::federation::NodeId;

/// One sampled metrics row for one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub node_id: NodeId,
    /// Learner iterations completed when the row was sampled.
    pub iteration: u64,
    /// Federation rounds applied to this node when the row was sampled.
    /// Rows at a respite boundary are sampled after the round, so the
    /// boundary row already reflects the distributed aggregate.
    pub round: u32,
    pub sum_q: f64,
    pub cumulative_reward: f64,
}
