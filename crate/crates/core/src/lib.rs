//! Decentralized federated reinforcement learning over tabular learners.
//!
//! Independent obstacle-avoidance learners each train a Q-table against
//! their own grid arena. A mobile agent walks an itinerary of nodes,
//! folds their tables into an aggregate on the forward pass (pairwise
//! average, running mean, or elementwise maximum), and writes the
//! aggregate back on the backward pass, so no central server is needed.
//!
//! Modules:
//! - [`table`]: dense Q-table storage and greedy policy extraction.
//! - [`rl`]: off-policy and on-policy update rules, epsilon-greedy
//!   selection.
//! - [`arena`]: deterministic grid arenas with proximity sensing.
//! - [`mdp`]: exact cell-by-heading MDP and value iteration, used as the
//!   optimality oracle.
//! - [`aggregate`]: the table aggregation operators.
//! - [`federation`]: the mobile agent, its visits, and the round driver.
//! - [`learner`]: one node's learner loop over the sensor abstraction.
//! - [`metrics`]: per-iteration metrics rows.
//! - [`seed`]: master-seed splitting for per-node streams.

pub mod aggregate;
pub mod arena;
pub mod federation;
pub mod learner;
pub mod mdp;
pub mod metrics;
pub mod rl;
pub mod seed;
pub mod table;

pub use aggregate::AggregationMethod;
pub use arena::{ArenaSpec, GridArena, RobotAction, RobotPose, SensorState};
pub use federation::{
    run_round, run_round_verified, AgentPhase, FederationConfig, FederationError, MobileAgent,
    NodeAccess, NodeId, NodeStatus, RoundReport, VisitEffect,
};
pub use learner::Learner;
pub use mdp::{value_iteration, ExactMdp};
pub use metrics::MetricsRecord;
pub use rl::{
    q_update, sarsa_update, select_action, Algorithm, LearningParams, RlError, Transition,
};
pub use table::{PolicySnapshot, QTable, TableError};
