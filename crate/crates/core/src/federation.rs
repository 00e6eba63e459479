//! The mobile agent and its federation round: a forward pass that folds
//! every itinerary node's Q-table into the payload, a turn-around at the
//! last node, and a backward pass that distributes the aggregate to every
//! node en route. No central aggregator exists; the agent is the only
//! coordination mechanism.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::time::{Duration, Instant};
use thiserror::Error;

use crate::aggregate::AggregationMethod;
use crate::rl::Algorithm;
use crate::table::{QTable, TableError};

/// Identifier of a node in the deployment.
pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FederationError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("itinerary is empty, no federation possible")]
    EmptyItinerary,
    #[error("duplicate node id {0} in itinerary")]
    DuplicateNode(NodeId),
    #[error("visit out of phase: expected {expected}")]
    WrongPhase { expected: &'static str },
    #[error("turn-around requires the final itinerary position, agent is at {position} of {len}")]
    NotAtFinalPosition { position: usize, len: usize },
    #[error("agent expected node {expected} but visited node {got}")]
    NodeMismatch { expected: NodeId, got: NodeId },
    #[error("agent tagged {tag} cannot visit node {node_id} running {node_algorithm}")]
    AlgorithmMismatch {
        node_id: NodeId,
        node_algorithm: Algorithm,
        tag: Algorithm,
    },
    #[error("round {round}: node tables differ after distribution")]
    PostRoundIdentity { round: u32 },
    #[error("node {node_id} unreachable: {message}")]
    Transport { node_id: NodeId, message: String },
    #[error("invalid federation config: {0}")]
    InvalidConfig(String),
}

/// Direction of the agent within the current round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentPhase {
    Forward,
    Backward,
}

/// What a visit did to the local table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VisitEffect {
    /// Forward-pass visit: the local table was only read.
    ReadOnly,
    /// The local table was replaced by the aggregate.
    Wrote,
}

/// Migrating state machine that performs the federation round.
///
/// The agent is pure state: itinerary, position, phase, payload table,
/// and aggregation method. It carries no code, so migration is a matter
/// of serializing this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobileAgent {
    pub agent_id: u32,
    pub itinerary: Vec<NodeId>,
    pub position: usize,
    pub phase: AgentPhase,
    pub payload: QTable,
    /// Number of tables folded into the payload this round.
    pub payload_count: u32,
    pub method: AggregationMethod,
    /// When set, the agent may only visit nodes running this algorithm.
    pub algo_tag: Option<Algorithm>,
    /// Completed rounds.
    pub round: u32,
}

impl MobileAgent {
    /// Creates an idle agent positioned at the start of its itinerary.
    /// The payload is zeroed until the first visit initialises it.
    pub fn new(
        agent_id: u32,
        itinerary: Vec<NodeId>,
        method: AggregationMethod,
        algo_tag: Option<Algorithm>,
        num_states: usize,
        num_actions: usize,
    ) -> Result<Self, FederationError> {
        if itinerary.is_empty() {
            return Err(FederationError::EmptyItinerary);
        }
        for (i, id) in itinerary.iter().enumerate() {
            if itinerary[..i].contains(id) {
                return Err(FederationError::DuplicateNode(*id));
            }
        }
        Ok(Self {
            agent_id,
            itinerary,
            position: 0,
            phase: AgentPhase::Forward,
            payload: QTable::zeroed(num_states, num_actions)?,
            payload_count: 1,
            method,
            algo_tag,
            round: 0,
        })
    }

    /// Node the agent will visit next.
    pub fn expected_node(&self) -> NodeId {
        self.itinerary[self.position]
    }

    fn at_final_position(&self) -> bool {
        self.position + 1 == self.itinerary.len()
    }

    /// First visit of a round, at itinerary position 0: the payload is
    /// initialised from the local table. A single-node itinerary
    /// completes the round immediately (the write-back is a value no-op).
    pub fn begin_round(&mut self, local: &mut QTable) -> Result<VisitEffect, FederationError> {
        if self.phase != AgentPhase::Forward || self.position != 0 {
            return Err(FederationError::WrongPhase {
                expected: "forward phase at itinerary position 0",
            });
        }
        self.payload.check_same_dimensions(local)?;
        self.payload = local.clone();
        self.payload_count = 1;
        if self.at_final_position() {
            *local = self.payload.clone();
            self.round += 1;
            return Ok(VisitEffect::Wrote);
        }
        self.position += 1;
        Ok(VisitEffect::ReadOnly)
    }

    /// Forward-pass visit at a non-final position: folds the local table
    /// into the payload and advances. The local table is not modified.
    pub fn forward_visit(&mut self, local: &QTable) -> Result<(), FederationError> {
        if self.phase != AgentPhase::Forward || self.position == 0 {
            return Err(FederationError::WrongPhase {
                expected: "forward phase past position 0",
            });
        }
        if self.at_final_position() {
            return Err(FederationError::WrongPhase {
                expected: "non-final position (final node turns the agent around)",
            });
        }
        self.payload = self.method.fold(&self.payload, self.payload_count, local)?;
        self.payload_count += 1;
        self.position += 1;
        Ok(())
    }

    /// Visit at the final itinerary node: folds the local table, replaces
    /// it with the finished aggregate, and reverses direction.
    pub fn turn_around(&mut self, local: &mut QTable) -> Result<(), FederationError> {
        if self.phase != AgentPhase::Forward {
            return Err(FederationError::WrongPhase {
                expected: "forward phase",
            });
        }
        if !self.at_final_position() {
            return Err(FederationError::NotAtFinalPosition {
                position: self.position,
                len: self.itinerary.len(),
            });
        }
        self.payload = self.method.fold(&self.payload, self.payload_count, local)?;
        self.payload_count += 1;
        *local = self.payload.clone();
        self.phase = AgentPhase::Backward;
        self.position -= 1;
        Ok(())
    }

    /// Backward-pass visit: replaces the local table wholesale with the
    /// payload. Visiting position 0 completes the round.
    pub fn backward_visit(&mut self, local: &mut QTable) -> Result<(), FederationError> {
        if self.phase != AgentPhase::Backward {
            return Err(FederationError::WrongPhase {
                expected: "backward phase",
            });
        }
        self.payload.check_same_dimensions(local)?;
        *local = self.payload.clone();
        if self.position == 0 {
            self.round += 1;
            self.phase = AgentPhase::Forward;
        } else {
            self.position -= 1;
        }
        Ok(())
    }

    /// Applies whichever visit the agent's phase and position call for.
    /// This is the single entry point node daemons use.
    pub fn visit(&mut self, local: &mut QTable) -> Result<VisitEffect, FederationError> {
        match self.phase {
            AgentPhase::Forward if self.position == 0 => self.begin_round(local),
            AgentPhase::Forward if self.at_final_position() => {
                self.turn_around(local)?;
                Ok(VisitEffect::Wrote)
            }
            AgentPhase::Forward => {
                self.forward_visit(local)?;
                Ok(VisitEffect::ReadOnly)
            }
            AgentPhase::Backward => {
                self.backward_visit(local)?;
                Ok(VisitEffect::Wrote)
            }
        }
    }

    /// Effect the next [`MobileAgent::visit`] will have on the visited
    /// table, derived from phase and position alone. Remote drivers use
    /// this to report what a migration did without seeing the table.
    pub fn pending_effect(&self) -> VisitEffect {
        match self.phase {
            AgentPhase::Forward if self.position == 0 && self.itinerary.len() == 1 => {
                VisitEffect::Wrote
            }
            AgentPhase::Forward if self.position == 0 => VisitEffect::ReadOnly,
            AgentPhase::Forward if self.at_final_position() => VisitEffect::Wrote,
            AgentPhase::Forward => VisitEffect::ReadOnly,
            AgentPhase::Backward => VisitEffect::Wrote,
        }
    }

    /// Puts an agent whose round was aborted back at the start of its
    /// itinerary so the next respite can retry.
    pub fn reset_for_retry(&mut self) {
        self.position = 0;
        self.phase = AgentPhase::Forward;
        self.payload_count = 1;
    }
}

/// Schedule and itinerary for a federation deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    /// Learner iterations between rounds.
    pub respite_m: u64,
    /// Maximum number of rounds; `None` runs rounds at every respite
    /// boundary until the experiment ends.
    pub rounds_max: Option<u32>,
    pub method: AggregationMethod,
    pub itinerary: Vec<NodeId>,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<(), FederationError> {
        if self.respite_m == 0 {
            return Err(FederationError::InvalidConfig(
                "respite_m must be at least 1".into(),
            ));
        }
        if self.itinerary.is_empty() {
            return Err(FederationError::EmptyItinerary);
        }
        for (i, id) in self.itinerary.iter().enumerate() {
            if self.itinerary[..i].contains(id) {
                return Err(FederationError::DuplicateNode(*id));
            }
        }
        Ok(())
    }
}

/// Order-preserving subsequence of `nodes` matching the agent's tag.
/// An untagged agent visits every node.
pub fn filter_itinerary(
    nodes: &[(NodeId, Algorithm)],
    tag: Option<Algorithm>,
) -> Result<Vec<NodeId>, FederationError> {
    let filtered: Vec<NodeId> = nodes
        .iter()
        .filter(|(_, algorithm)| tag.map_or(true, |t| *algorithm == t))
        .map(|(id, _)| *id)
        .collect();
    if filtered.is_empty() {
        return Err(FederationError::EmptyItinerary);
    }
    Ok(filtered)
}

/// Identity and progress report from a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStatus {
    pub node_id: NodeId,
    pub algorithm: Algorithm,
    pub iteration: u64,
    pub sum_q: f64,
}

/// Uniform access to a federated node, local or remote. Visits are
/// transactional: the node applies the agent against its table under
/// exclusive access and hands the updated agent back.
pub trait NodeAccess {
    fn node_id(&self) -> NodeId;
    fn visit(&mut self, agent: &mut MobileAgent) -> Result<VisitEffect, FederationError>;
    fn status(&mut self) -> Result<NodeStatus, FederationError>;
    fn table_snapshot(&mut self) -> Result<QTable, FederationError>;
}

impl<N: NodeAccess + ?Sized> NodeAccess for &mut N {
    fn node_id(&self) -> NodeId {
        (**self).node_id()
    }

    fn visit(&mut self, agent: &mut MobileAgent) -> Result<VisitEffect, FederationError> {
        (**self).visit(agent)
    }

    fn status(&mut self) -> Result<NodeStatus, FederationError> {
        (**self).status()
    }

    fn table_snapshot(&mut self) -> Result<QTable, FederationError> {
        (**self).table_snapshot()
    }
}

/// Per-node sums before and after a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRoundStats {
    pub node_id: NodeId,
    pub pre_sum_q: f64,
    pub post_sum_q: f64,
}

/// Outcome of one completed federation round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u32,
    pub method: AggregationMethod,
    pub stats: Vec<NodeRoundStats>,
    pub duration: Duration,
}

impl fmt::Display for RoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "round={} method={} duration_us={}",
            self.round,
            self.method,
            self.duration.as_micros()
        )?;
        for s in &self.stats {
            write!(
                f,
                " node={} pre_sum_q={} post_sum_q={}",
                s.node_id, s.pre_sum_q, s.post_sum_q
            )?;
        }
        Ok(())
    }
}

/// Executes one full round over `nodes`, which must match the agent's
/// itinerary in id and order: payload initialisation at the first node,
/// forward folds, turn-around at the last node, backward distribution.
///
/// Post-round sums are taken from the final payload, which is what every
/// node's table was just set to. On any failure the agent is reset so
/// the next respite can retry; nodes visited before the first write keep
/// their tables untouched.
pub fn run_round<N: NodeAccess>(
    agent: &mut MobileAgent,
    nodes: &mut [N],
) -> Result<RoundReport, FederationError> {
    let started = Instant::now();
    let result = drive_round(agent, nodes);
    match result {
        Ok(stats) => Ok(RoundReport {
            round: agent.round,
            method: agent.method,
            stats,
            duration: started.elapsed(),
        }),
        Err(err) => {
            agent.reset_for_retry();
            Err(err)
        }
    }
}

/// [`run_round`] plus a snapshot sweep asserting that every node's table
/// is bit-identical to the distributed payload. Only meaningful when the
/// nodes' learners are paused across the call (lockstep in-process mode,
/// or any context that holds the nodes still); a node that has already
/// resumed learning would legitimately have moved past the aggregate.
pub fn run_round_verified<N: NodeAccess>(
    agent: &mut MobileAgent,
    nodes: &mut [N],
) -> Result<RoundReport, FederationError> {
    let report = run_round(agent, nodes)?;
    for node in nodes.iter_mut() {
        if !node.table_snapshot()?.bit_identical(&agent.payload) {
            return Err(FederationError::PostRoundIdentity { round: agent.round });
        }
    }
    Ok(report)
}

fn drive_round<N: NodeAccess>(
    agent: &mut MobileAgent,
    nodes: &mut [N],
) -> Result<Vec<NodeRoundStats>, FederationError> {
    if agent.phase != AgentPhase::Forward || agent.position != 0 {
        return Err(FederationError::WrongPhase {
            expected: "idle agent (forward phase, position 0)",
        });
    }
    if nodes.len() != agent.itinerary.len() {
        return Err(FederationError::InvalidConfig(format!(
            "round over {} nodes but itinerary has {} stops",
            nodes.len(),
            agent.itinerary.len()
        )));
    }
    for (node, &expected) in nodes.iter().zip(agent.itinerary.iter()) {
        if node.node_id() != expected {
            return Err(FederationError::NodeMismatch {
                expected,
                got: node.node_id(),
            });
        }
    }

    let n = nodes.len();
    let mut pre = Vec::with_capacity(n);
    for node in nodes.iter_mut() {
        pre.push(node.status()?.sum_q);
    }

    for node in nodes.iter_mut() {
        node.visit(agent)?;
    }
    for node in nodes[..n - 1].iter_mut().rev() {
        node.visit(agent)?;
    }

    let post_sum_q = agent.payload.sum_q();
    Ok(nodes
        .iter()
        .zip(pre)
        .map(|(node, pre_sum_q)| NodeRoundStats {
            node_id: node.node_id(),
            pre_sum_q,
            post_sum_q,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: f64) -> QTable {
        QTable::from_rows(&[vec![v]]).unwrap()
    }

    fn agent(n: u32, method: AggregationMethod) -> MobileAgent {
        MobileAgent::new(0, (1..=n).collect(), method, None, 1, 1).unwrap()
    }

    #[test]
    fn forward_visit_folds_and_advances() {
        let mut a = agent(3, AggregationMethod::ElementwiseMax);
        let mut first = t1(4.0);
        assert_eq!(a.begin_round(&mut first).unwrap(), VisitEffect::ReadOnly);
        assert_eq!(a.payload, t1(4.0));

        a.forward_visit(&t1(7.0)).unwrap();
        assert_eq!(a.payload, t1(7.0));
        assert_eq!(a.position, 2);
        assert_eq!(a.payload_count, 2);
    }

    #[test]
    fn forward_visit_average() {
        let mut a = agent(3, AggregationMethod::PairwiseAverage);
        a.begin_round(&mut t1(4.0)).unwrap();
        a.forward_visit(&t1(0.0)).unwrap();
        assert_eq!(a.payload, t1(2.0));
    }

    #[test]
    fn forward_visit_leaves_local_untouched() {
        let mut a = agent(3, AggregationMethod::PairwiseAverage);
        a.begin_round(&mut t1(4.0)).unwrap();
        let local = t1(8.0);
        a.forward_visit(&local).unwrap();
        assert_eq!(local, t1(8.0));
    }

    #[test]
    fn turn_around_writes_final_aggregate() {
        // avg fold of [[4]],[[0]],[[0]] is ((4+0)/2+0)/2 = [[1]].
        let mut a = agent(3, AggregationMethod::PairwiseAverage);
        a.begin_round(&mut t1(4.0)).unwrap();
        a.forward_visit(&t1(0.0)).unwrap();
        let mut last = t1(0.0);
        a.turn_around(&mut last).unwrap();
        assert_eq!(last, t1(1.0));
        assert_eq!(a.payload, t1(1.0));
        assert_eq!(a.phase, AgentPhase::Backward);
        assert_eq!(a.position, 1);
    }

    #[test]
    fn turn_around_with_max_takes_global_max() {
        let mut a = agent(3, AggregationMethod::ElementwiseMax);
        a.begin_round(&mut t1(4.0)).unwrap();
        a.forward_visit(&t1(0.0)).unwrap();
        let mut last = t1(7.0);
        a.turn_around(&mut last).unwrap();
        assert_eq!(last, t1(7.0));
    }

    #[test]
    fn turn_around_rejected_off_final_position() {
        let mut a = agent(3, AggregationMethod::PairwiseAverage);
        a.begin_round(&mut t1(1.0)).unwrap();
        let err = a.turn_around(&mut t1(0.0)).unwrap_err();
        assert_eq!(
            err,
            FederationError::NotAtFinalPosition {
                position: 1,
                len: 3
            }
        );
    }

    #[test]
    fn single_node_round_completes_immediately() {
        let mut a = agent(1, AggregationMethod::PairwiseAverage);
        let mut local = t1(5.0);
        assert_eq!(a.begin_round(&mut local).unwrap(), VisitEffect::Wrote);
        assert_eq!(local, t1(5.0));
        assert_eq!(a.payload, t1(5.0));
        assert_eq!(a.round, 1);
        assert_eq!(a.phase, AgentPhase::Forward);
        assert_eq!(a.position, 0);
    }

    #[test]
    fn backward_visit_replaces_wholesale() {
        let mut a = agent(2, AggregationMethod::PairwiseAverage);
        a.begin_round(&mut t1(2.0)).unwrap();
        a.turn_around(&mut t1(0.0)).unwrap();
        let payload_before = a.payload.clone();
        let mut local = t1(9.0);
        a.backward_visit(&mut local).unwrap();
        assert_eq!(local, t1(1.0));
        assert_eq!(a.payload, payload_before);
        assert_eq!(a.round, 1);
    }

    #[test]
    fn duplicate_or_empty_itinerary_rejected() {
        assert_eq!(
            MobileAgent::new(0, vec![], AggregationMethod::ElementwiseMax, None, 1, 1)
                .unwrap_err(),
            FederationError::EmptyItinerary
        );
        assert_eq!(
            MobileAgent::new(
                0,
                vec![1, 2, 1],
                AggregationMethod::ElementwiseMax,
                None,
                1,
                1
            )
            .unwrap_err(),
            FederationError::DuplicateNode(1)
        );
    }

    #[test]
    fn filter_itinerary_selects_matching_nodes() {
        let nodes = [
            (1, Algorithm::QLearning),
            (2, Algorithm::Sarsa),
            (3, Algorithm::QLearning),
            (4, Algorithm::Sarsa),
            (5, Algorithm::QLearning),
        ];
        assert_eq!(
            filter_itinerary(&nodes, Some(Algorithm::QLearning)).unwrap(),
            vec![1, 3, 5]
        );
        assert_eq!(
            filter_itinerary(&nodes, None).unwrap(),
            vec![1, 2, 3, 4, 5]
        );
        let all_sarsa = [(1, Algorithm::Sarsa), (2, Algorithm::Sarsa)];
        assert_eq!(
            filter_itinerary(&all_sarsa, Some(Algorithm::QLearning)).unwrap_err(),
            FederationError::EmptyItinerary
        );
    }

    #[test]
    fn dimension_mismatch_surfaces() {
        let mut a = agent(2, AggregationMethod::PairwiseAverage);
        let mut wide = QTable::zeroed(1, 2).unwrap();
        assert!(matches!(
            a.begin_round(&mut wide),
            Err(FederationError::Table(TableError::DimensionMismatch { .. }))
        ));
    }
}
