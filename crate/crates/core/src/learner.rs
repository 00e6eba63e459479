//! One node's learner: an arena, a Q-table, and a seeded policy RNG,
//! advanced one (sense, select, step, update) iteration at a time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::arena::{
    ArenaError, ArenaSpec, GridArena, RobotAction, RobotPose, NUM_ACTIONS, NUM_SENSOR_STATES,
};
use crate::federation::{
    FederationError, MobileAgent, NodeAccess, NodeId, NodeStatus, VisitEffect,
};
use crate::metrics::MetricsRecord;
use crate::rl::{
    q_update_in_place, sarsa_update_in_place, select_action, Algorithm, LearningParams, RlError,
    Transition,
};
use crate::table::QTable;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnerError {
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error(transparent)]
    Rl(#[from] RlError),
}

/// Tabular learner over the 8-state sensor abstraction of one arena.
#[derive(Debug, Clone)]
pub struct Learner {
    node_id: NodeId,
    algorithm: Algorithm,
    arena: GridArena,
    pose: RobotPose,
    table: QTable,
    params: LearningParams,
    rng: ChaCha8Rng,
    iteration: u64,
    cumulative_reward: f64,
    /// On-policy lookahead: the (state, action) pair already committed
    /// for the next step. Survives table replacement by a federation
    /// round, so the first post-round step still executes the committed
    /// action.
    pending: Option<(usize, usize)>,
}

impl Learner {
    pub fn new(
        node_id: NodeId,
        algorithm: Algorithm,
        arena_spec: &ArenaSpec,
        params: LearningParams,
        policy_seed: u64,
    ) -> Result<Self, LearnerError> {
        params.validate()?;
        let arena = arena_spec.build()?;
        let pose = arena.spawn_pose();
        Ok(Self {
            node_id,
            algorithm,
            arena,
            pose,
            table: QTable::zeroed(NUM_SENSOR_STATES, NUM_ACTIONS).expect("fixed dimensions"),
            params,
            rng: ChaCha8Rng::seed_from_u64(policy_seed),
            iteration: 0,
            cumulative_reward: 0.0,
            pending: None,
        })
    }

    pub fn node_id(&self) -> NodeId {
        self.node_id
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn cumulative_reward(&self) -> f64 {
        self.cumulative_reward
    }

    pub fn sum_q(&self) -> f64 {
        self.table.sum_q()
    }

    pub fn epsilon(&self) -> f64 {
        self.params.epsilon
    }

    pub fn table(&self) -> &QTable {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut QTable {
        &mut self.table
    }

    fn sense_id(&self) -> usize {
        self.arena
            .sense(&self.pose)
            .expect("pose stays on free cells")
            .state_id
    }

    fn select(&mut self, state: usize) -> usize {
        select_action(&self.table, state, &self.params, &mut self.rng)
            .expect("sensor state in range")
    }

    /// Advances one iteration: sense, select, act, update.
    pub fn step(&mut self) {
        let (state, action) = match self.algorithm {
            Algorithm::QLearning => {
                let state = self.sense_id();
                (state, self.select(state))
            }
            // On-policy: execute the action committed at the previous
            // step, or select fresh on the very first iteration.
            Algorithm::Sarsa => self.pending.take().unwrap_or_else(|| {
                let state = self.sense_id();
                (state, self.select(state))
            }),
        };

        let (next_pose, reward, _collided) = self
            .arena
            .step(&self.pose, RobotAction::from_index(action).expect("3 actions"))
            .expect("pose stays on free cells");
        self.pose = next_pose;
        let next_state = self.sense_id();

        match self.algorithm {
            Algorithm::QLearning => {
                let t = Transition {
                    state,
                    action,
                    reward,
                    next_state,
                    next_action: None,
                };
                q_update_in_place(&mut self.table, &t, &self.params)
                    .expect("indices valid by construction");
            }
            Algorithm::Sarsa => {
                let next_action = self.select(next_state);
                let t = Transition {
                    state,
                    action,
                    reward,
                    next_state,
                    next_action: Some(next_action),
                };
                sarsa_update_in_place(&mut self.table, &t, &self.params)
                    .expect("indices valid by construction");
                self.pending = Some((next_state, next_action));
            }
        }

        self.params.decay_epsilon();
        self.iteration += 1;
        self.cumulative_reward += reward;
    }

    /// Builds the metrics row for the current iteration.
    pub fn metrics_record(&self, rounds_applied: u32) -> MetricsRecord {
        MetricsRecord {
            node_id: self.node_id,
            iteration: self.iteration,
            round: rounds_applied,
            sum_q: self.sum_q(),
            cumulative_reward: self.cumulative_reward,
        }
    }
}

impl NodeAccess for Learner {
    fn node_id(&self) -> NodeId {
        self.node_id
    }

    fn visit(&mut self, agent: &mut MobileAgent) -> Result<VisitEffect, FederationError> {
        if agent.expected_node() != self.node_id {
            return Err(FederationError::NodeMismatch {
                expected: agent.expected_node(),
                got: self.node_id,
            });
        }
        if let Some(tag) = agent.algo_tag {
            if tag != self.algorithm {
                return Err(FederationError::AlgorithmMismatch {
                    node_id: self.node_id,
                    node_algorithm: self.algorithm,
                    tag,
                });
            }
        }
        agent.visit(&mut self.table)
    }

    fn status(&mut self) -> Result<NodeStatus, FederationError> {
        Ok(NodeStatus {
            node_id: self.node_id,
            algorithm: self.algorithm,
            iteration: self.iteration,
            sum_q: self.sum_q(),
        })
    }

    fn table_snapshot(&mut self) -> Result<QTable, FederationError> {
        Ok(self.table.clone())
    }
}
