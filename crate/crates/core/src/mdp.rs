//! Exact deterministic MDP over the arena's cell-by-heading state space,
//! solved by value iteration. This is the oracle substrate: the 8-state
//! sensor abstraction is not Markov, so optimality checks run here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arena::{GridArena, RobotAction, RobotPose, NUM_ACTIONS};
use crate::table::QTable;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error("discount factor {0} outside [0, 1)")]
    InvalidGamma(f64),
    #[error("tolerance {0} must be positive")]
    InvalidTolerance(f64),
    #[error("value iteration did not converge after {sweeps} sweeps (residual {residual})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("transition table length {got} does not match {num_states}x{num_actions}")]
    ShapeMismatch {
        num_states: usize,
        num_actions: usize,
        got: usize,
    },
    #[error("state index {index} out of range (mdp has {num_states} states)")]
    StateOutOfRange { index: usize, num_states: usize },
}

/// Deterministic finite MDP: one successor state and reward per
/// state-action pair, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactMdp {
    num_states: usize,
    num_actions: usize,
    next_state: Vec<usize>,
    reward: Vec<f64>,
    initial_state: usize,
}

impl ExactMdp {
    /// Builds an MDP directly from transition and reward tables, both
    /// indexed `[state * num_actions + action]`.
    pub fn from_tables(
        num_states: usize,
        num_actions: usize,
        next_state: Vec<usize>,
        reward: Vec<f64>,
        initial_state: usize,
    ) -> Result<Self, MdpError> {
        let expected = num_states * num_actions;
        if next_state.len() != expected {
            return Err(MdpError::ShapeMismatch {
                num_states,
                num_actions,
                got: next_state.len(),
            });
        }
        if reward.len() != expected {
            return Err(MdpError::ShapeMismatch {
                num_states,
                num_actions,
                got: reward.len(),
            });
        }
        for &s in next_state.iter().chain(std::iter::once(&initial_state)) {
            if s >= num_states {
                return Err(MdpError::StateOutOfRange {
                    index: s,
                    num_states,
                });
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            next_state,
            reward,
            initial_state,
        })
    }

    /// Enumerates the arena's free poses (free cells in row-major order,
    /// each with the four headings) into an exact MDP. Returns the MDP and
    /// the pose corresponding to each state index; the initial state is
    /// the spawn pose.
    pub fn from_arena(arena: &GridArena) -> (Self, Vec<RobotPose>) {
        use std::collections::HashMap;

        let mut poses = Vec::new();
        for (x, y) in arena.free_cells() {
            for heading in crate::arena::Heading::ALL {
                poses.push(RobotPose { x, y, heading });
            }
        }
        let index_of: HashMap<RobotPose, usize> =
            poses.iter().enumerate().map(|(i, &p)| (p, i)).collect();

        let num_states = poses.len();
        let mut next_state = Vec::with_capacity(num_states * NUM_ACTIONS);
        let mut reward = Vec::with_capacity(num_states * NUM_ACTIONS);
        for pose in &poses {
            for action in RobotAction::ALL {
                let (next, r, _) = arena.step(pose, action).expect("pose is free");
                next_state.push(index_of[&next]);
                reward.push(r);
            }
        }
        let initial_state = index_of[&arena.spawn_pose()];
        let mdp = Self {
            num_states,
            num_actions: NUM_ACTIONS,
            next_state,
            reward,
            initial_state,
        };
        (mdp, poses)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn next(&self, state: usize, action: usize) -> usize {
        self.next_state[state * self.num_actions + action]
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward[state * self.num_actions + action]
    }

    /// States reachable from the initial state under any action sequence.
    pub fn reachable_states(&self) -> Vec<bool> {
        let mut seen = vec![false; self.num_states];
        let mut queue = std::collections::VecDeque::from([self.initial_state]);
        seen[self.initial_state] = true;
        while let Some(s) = queue.pop_front() {
            for a in 0..self.num_actions {
                let n = self.next(s, a);
                if !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        seen
    }

    /// Sup-norm Bellman optimality residual of `q` over all state-action
    /// pairs.
    pub fn bellman_residual(&self, q: &QTable, gamma: f64) -> f64 {
        let mut worst = 0.0_f64;
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let target =
                    self.reward(s, a) + gamma * q.row_max(self.next(s, a)).expect("state in range");
                let residual = (target - q.get(s, a).expect("in range")).abs();
                worst = worst.max(residual);
            }
        }
        worst
    }

    /// Actions whose optimal value is within `tie_eps` of the row maximum.
    pub fn optimal_action_set(q_star: &QTable, state: usize, tie_eps: f64) -> Vec<usize> {
        let best = q_star.row_max(state).expect("state in range");
        q_star
            .row(state)
            .expect("state in range")
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= best - tie_eps)
            .map(|(a, _)| a)
            .collect()
    }
}

/// Maximum number of sweeps before value iteration reports non-convergence.
pub const VALUE_ITERATION_SWEEP_LIMIT: usize = 1_000_000;

/// Solves for the optimal action-value table by repeated application of
/// the Bellman optimality operator, sweeping states then actions in
/// ascending order. Returns once the sup-norm residual drops below `tol`.
pub fn value_iteration(mdp: &ExactMdp, gamma: f64, tol: f64) -> Result<QTable, MdpError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(MdpError::InvalidGamma(gamma));
    }
    if tol <= 0.0 {
        return Err(MdpError::InvalidTolerance(tol));
    }
    let mut q = QTable::zeroed(mdp.num_states(), mdp.num_actions()).expect("non-empty mdp");
    let mut residual = f64::INFINITY;
    for _sweep in 0..VALUE_ITERATION_SWEEP_LIMIT {
        let mut next = q.clone();
        residual = 0.0;
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let target =
                    mdp.reward(s, a) + gamma * q.row_max(mdp.next(s, a)).expect("in range");
                let old = q.get(s, a).expect("in range");
                residual = residual.max((target - old).abs());
                next.set(s, a, target).expect("finite");
            }
        }
        q = next;
        // The residual of the returned table is at most gamma times the
        // residual just measured, so it is strictly below tol.
        if residual < tol {
            return Ok(q);
        }
    }
    Err(MdpError::NoConvergence {
        sweeps: VALUE_ITERATION_SWEEP_LIMIT,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arena::SensorState;

    fn single_state_mdp(reward: f64) -> ExactMdp {
        ExactMdp::from_tables(1, 1, vec![0], vec![reward], 0).unwrap()
    }

    #[test]
    fn value_iteration_geometric_series() {
        // One state, one action, reward 1, gamma 0.9: Q* = 1/(1-0.9) = 10.
        let mdp = single_state_mdp(1.0);
        let q = value_iteration(&mdp, 0.9, 1e-9).unwrap();
        assert!((q.get(0, 0).unwrap() - 10.0).abs() < 1e-8);
    }

    #[test]
    fn value_iteration_zero_discount_is_immediate_reward() {
        let arena = GridArena::generate(6, 6, 2, 5).unwrap();
        let (mdp, _) = ExactMdp::from_arena(&arena);
        let q = value_iteration(&mdp, 0.0, 1e-12).unwrap();
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                assert_eq!(q.get(s, a).unwrap(), mdp.reward(s, a));
            }
        }
    }

    #[test]
    fn value_iteration_residual_meets_tolerance() {
        let arena = GridArena::generate(6, 6, 2, 11).unwrap();
        let (mdp, _) = ExactMdp::from_arena(&arena);
        let tol = 1e-10;
        let q = value_iteration(&mdp, 0.9, tol).unwrap();
        assert!(mdp.bellman_residual(&q, 0.9) < tol);
    }

    #[test]
    fn optimal_policy_never_drives_into_obstacles() {
        let arena = GridArena::generate(6, 6, 0, 0).unwrap();
        let (mdp, poses) = ExactMdp::from_arena(&arena);
        let q = value_iteration(&mdp, 0.9, 1e-10).unwrap();
        for (s, pose) in poses.iter().enumerate() {
            let SensorState { state_id } = arena.sense(pose).unwrap();
            let front_blocked = state_id & 4 != 0;
            if front_blocked {
                let greedy = q.argmax(s).unwrap();
                assert_ne!(
                    RobotAction::from_index(greedy).unwrap(),
                    RobotAction::Forward,
                    "state {s} at {pose:?} would collide"
                );
            }
        }
    }

    #[test]
    fn arena_mdp_state_space_is_free_poses() {
        let arena = GridArena::generate(6, 6, 0, 0).unwrap();
        let (mdp, poses) = ExactMdp::from_arena(&arena);
        // 4x4 free interior cells, 4 headings each.
        assert_eq!(mdp.num_states(), 64);
        assert_eq!(poses.len(), 64);
        assert_eq!(poses[mdp.initial_state()], arena.spawn_pose());
        // Transitions must be total: every successor is a valid state.
        let reachable = mdp.reachable_states();
        assert!(reachable[mdp.initial_state()]);
        // An empty arena is fully connected.
        assert!(reachable.iter().all(|&r| r));
    }

    #[test]
    fn invalid_arguments_rejected() {
        let mdp = single_state_mdp(1.0);
        assert!(matches!(
            value_iteration(&mdp, 1.0, 1e-6),
            Err(MdpError::InvalidGamma(_))
        ));
        assert!(matches!(
            value_iteration(&mdp, 0.5, 0.0),
            Err(MdpError::InvalidTolerance(_))
        ));
        assert!(ExactMdp::from_tables(2, 1, vec![0], vec![0.0, 0.0], 0).is_err());
        assert!(ExactMdp::from_tables(2, 1, vec![0, 5], vec![0.0, 0.0], 0).is_err());
    }
}
