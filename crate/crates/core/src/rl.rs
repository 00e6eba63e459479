//! Temporal-difference update rules and the action-selection policy.
//!
//! Two bootstrap targets are supported: the off-policy rule takes the row
//! maximum of the successor state, the on-policy rule takes the value of
//! the successor action that was actually selected. Both change exactly
//! one table entry per call.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{QTable, TableError};

/// Errors raised by the update rules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RlError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("non-finite reward {0} rejected")]
    NonFiniteReward(f64),
    #[error("on-policy update requires next_action, none provided")]
    MissingNextAction,
    #[error("invalid learning parameter {name}={value}, expected {expected}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },
}

/// Which update rule a learner runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    QLearning,
    Sarsa,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::QLearning => f.write_str("qlearning"),
            Algorithm::Sarsa => f.write_str("sarsa"),
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "q" | "qlearning" => Ok(Algorithm::QLearning),
            "s" | "sarsa" => Ok(Algorithm::Sarsa),
            other => Err(format!(
                "unknown algorithm {other:?}, expected q | qlearning | s | sarsa"
            )),
        }
    }
}

/// Learning-rate, discount, and exploration schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningParams {
    /// Learning rate in [0, 1].
    pub alpha: f64,
    /// Discount factor in [0, 1).
    pub gamma: f64,
    /// Exploration probability in [0, 1].
    pub epsilon: f64,
    /// Multiplicative epsilon decay per iteration, in (0, 1].
    pub epsilon_decay: f64,
    /// Floor for the decayed epsilon, in [0, 1].
    pub epsilon_min: f64,
}

impl Default for LearningParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.9,
            epsilon: 0.3,
            epsilon_decay: 0.9995,
            epsilon_min: 0.05,
        }
    }
}

impl LearningParams {
    /// Checks every field against its stated range.
    pub fn validate(&self) -> Result<(), RlError> {
        let in_unit = |name, value: f64| {
            if (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(RlError::InvalidParam {
                    name,
                    value,
                    expected: "value in [0, 1]",
                })
            }
        };
        in_unit("alpha", self.alpha)?;
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(RlError::InvalidParam {
                name: "gamma",
                value: self.gamma,
                expected: "value in [0, 1)",
            });
        }
        in_unit("epsilon", self.epsilon)?;
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return Err(RlError::InvalidParam {
                name: "epsilon_decay",
                value: self.epsilon_decay,
                expected: "value in (0, 1]",
            });
        }
        in_unit("epsilon_min", self.epsilon_min)?;
        if self.epsilon_min > self.epsilon {
            return Err(RlError::InvalidParam {
                name: "epsilon_min",
                value: self.epsilon_min,
                expected: "epsilon_min <= epsilon",
            });
        }
        Ok(())
    }

    /// One multiplicative decay step, clamped at `epsilon_min`.
    pub fn decay_epsilon(&mut self) {
        self.epsilon = (self.epsilon * self.epsilon_decay).max(self.epsilon_min);
    }
}

/// One experience tuple. `next_action` is only present for on-policy updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub next_action: Option<usize>,
}

fn check_transition(table: &QTable, t: &Transition) -> Result<(), RlError> {
    table.get(t.state, t.action)?;
    table.row(t.next_state)?;
    if let Some(a) = t.next_action {
        table.get(t.next_state, a)?;
    }
    if !t.reward.is_finite() {
        return Err(RlError::NonFiniteReward(t.reward));
    }
    Ok(())
}

fn td_update(table: &mut QTable, t: &Transition, p: &LearningParams, bootstrap: f64) {
    let old = table
        .get(t.state, t.action)
        .expect("indices checked by caller");
    let new = old + p.alpha * (t.reward + p.gamma * bootstrap - old);
    table
        .set(t.state, t.action, new)
        .expect("finite by construction");
}

/// Off-policy update: bootstraps on the maximum over the successor row.
///
/// Only the `(state, action)` entry changes; all other entries are
/// bit-identical to the input.
pub fn q_update(table: &QTable, t: &Transition, p: &LearningParams) -> Result<QTable, RlError> {
    let mut out = table.clone();
    q_update_in_place(&mut out, t, p)?;
    Ok(out)
}

/// In-place variant of [`q_update`] used by the learner hot loop.
pub fn q_update_in_place(
    table: &mut QTable,
    t: &Transition,
    p: &LearningParams,
) -> Result<(), RlError> {
    check_transition(table, t)?;
    let bootstrap = table.row_max(t.next_state)?;
    td_update(table, t, p, bootstrap);
    Ok(())
}

/// On-policy update: bootstraps on the provided successor action.
pub fn sarsa_update(table: &QTable, t: &Transition, p: &LearningParams) -> Result<QTable, RlError> {
    let mut out = table.clone();
    sarsa_update_in_place(&mut out, t, p)?;
    Ok(out)
}

/// In-place variant of [`sarsa_update`].
pub fn sarsa_update_in_place(
    table: &mut QTable,
    t: &Transition,
    p: &LearningParams,
) -> Result<(), RlError> {
    check_transition(table, t)?;
    let next_action = t.next_action.ok_or(RlError::MissingNextAction)?;
    let bootstrap = table.get(t.next_state, next_action)?;
    td_update(table, t, p, bootstrap);
    Ok(())
}

/// Epsilon-greedy action selection.
///
/// Draws one uniform sample; below `epsilon` it explores with a second
/// uniform draw over all actions, otherwise it returns the greedy action
/// with lowest-index tie-break. Deterministic given the rng state.
pub fn select_action<R: Rng + ?Sized>(
    table: &QTable,
    state: usize,
    p: &LearningParams,
    rng: &mut R,
) -> Result<usize, RlError> {
    table.row(state)?;
    if rng.gen::<f64>() < p.epsilon {
        Ok(rng.gen_range(0..table.num_actions()))
    } else {
        Ok(table.argmax(state)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(alpha: f64, gamma: f64) -> LearningParams {
        LearningParams {
            alpha,
            gamma,
            ..LearningParams::default()
        }
    }

    #[test]
    fn q_update_single_positive_reward() {
        // Q(s,a)=0, r=1, alpha=0.5, gamma=0.9, successor row all zero.
        let table = QTable::zeroed(2, 2).unwrap();
        let t = Transition {
            state: 0,
            action: 1,
            reward: 1.0,
            next_state: 1,
            next_action: None,
        };
        let out = q_update(&table, &t, &params(0.5, 0.9)).unwrap();
        assert_eq!(out.get(0, 1).unwrap(), 0.5);
        // All other entries untouched.
        assert_eq!(out.get(0, 0).unwrap(), 0.0);
        assert_eq!(out.get(1, 0).unwrap(), 0.0);
        assert_eq!(out.get(1, 1).unwrap(), 0.0);
    }

    #[test]
    fn q_update_zero_alpha_is_identity() {
        let table = QTable::from_rows(&[vec![1.5, -2.0], vec![0.25, 9.0]]).unwrap();
        let t = Transition {
            state: 1,
            action: 0,
            reward: -3.0,
            next_state: 0,
            next_action: None,
        };
        let out = q_update(&table, &t, &params(0.0, 0.9)).unwrap();
        assert!(out.bit_identical(&table));
    }

    #[test]
    fn q_update_negative_reward() {
        // 2 + 0.1*(-10 + 0.9*4 - 2) = 1.16
        let mut table = QTable::zeroed(2, 2).unwrap();
        table.set(0, 0, 2.0).unwrap();
        table.set(1, 1, 4.0).unwrap();
        let t = Transition {
            state: 0,
            action: 0,
            reward: -10.0,
            next_state: 1,
            next_action: None,
        };
        let out = q_update(&table, &t, &params(0.1, 0.9)).unwrap();
        assert!((out.get(0, 0).unwrap() - 1.16).abs() < 1e-12);
    }

    #[test]
    fn sarsa_update_uses_provided_action() {
        // 1 + 0.5*(2 + 0.5*2 - 1) = 2.0
        let mut table = QTable::zeroed(2, 2).unwrap();
        table.set(0, 0, 1.0).unwrap();
        table.set(1, 1, 2.0).unwrap();
        let t = Transition {
            state: 0,
            action: 0,
            reward: 2.0,
            next_state: 1,
            next_action: Some(1),
        };
        let out = sarsa_update(&table, &t, &params(0.5, 0.5)).unwrap();
        assert_eq!(out.get(0, 0).unwrap(), 2.0);
    }

    #[test]
    fn sarsa_update_zero_alpha_is_identity() {
        let table = QTable::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let t = Transition {
            state: 0,
            action: 0,
            reward: 5.0,
            next_state: 1,
            next_action: Some(0),
        };
        let out = sarsa_update(&table, &t, &params(0.0, 0.5)).unwrap();
        assert!(out.bit_identical(&table));
    }

    #[test]
    fn sarsa_missing_next_action_rejected() {
        let table = QTable::zeroed(2, 2).unwrap();
        let t = Transition {
            state: 0,
            action: 0,
            reward: 1.0,
            next_state: 1,
            next_action: None,
        };
        assert_eq!(
            sarsa_update(&table, &t, &params(0.5, 0.5)).unwrap_err(),
            RlError::MissingNextAction
        );
    }

    #[test]
    fn sarsa_and_q_targets_differ_by_bootstrap_gap() {
        // Successor row [0, 4]: off-policy bootstraps on 4, on-policy on
        // Q(s',0)=0, so the results differ by alpha*gamma*4 = 0.36.
        let mut table = QTable::zeroed(2, 2).unwrap();
        table.set(0, 0, 2.0).unwrap();
        table.set(1, 1, 4.0).unwrap();
        let t = Transition {
            state: 0,
            action: 0,
            reward: -10.0,
            next_state: 1,
            next_action: Some(0),
        };
        let p = params(0.1, 0.9);
        let q = q_update(&table, &t, &p).unwrap().get(0, 0).unwrap();
        let s = sarsa_update(&table, &t, &p).unwrap().get(0, 0).unwrap();
        assert!((q - s - 0.36).abs() < 1e-12);
    }

    #[test]
    fn non_finite_reward_rejected() {
        let mut table = QTable::zeroed(2, 2).unwrap();
        let t = Transition {
            state: 0,
            action: 0,
            reward: f64::NAN,
            next_state: 1,
            next_action: None,
        };
        assert!(matches!(
            q_update_in_place(&mut table, &t, &params(0.5, 0.9)),
            Err(RlError::NonFiniteReward(_))
        ));
    }

    #[test]
    fn index_errors_name_offending_index() {
        let table = QTable::zeroed(2, 2).unwrap();
        let t = Transition {
            state: 9,
            action: 0,
            reward: 0.0,
            next_state: 0,
            next_action: None,
        };
        assert_eq!(
            q_update(&table, &t, &params(0.5, 0.9)).unwrap_err(),
            RlError::Table(TableError::StateOutOfRange {
                index: 9,
                num_states: 2
            })
        );
    }

    #[test]
    fn select_action_pure_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = LearningParams {
            epsilon: 0.0,
            epsilon_min: 0.0,
            ..LearningParams::default()
        };
        let t = QTable::from_rows(&[vec![1.0, 3.0, 2.0]]).unwrap();
        assert_eq!(select_action(&t, 0, &p, &mut rng).unwrap(), 1);
        let t = QTable::from_rows(&[vec![5.0, 5.0, 1.0]]).unwrap();
        assert_eq!(select_action(&t, 0, &p, &mut rng).unwrap(), 0);
    }

    #[test]
    fn select_action_uniform_when_always_exploring() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = LearningParams {
            epsilon: 1.0,
            ..LearningParams::default()
        };
        let t = QTable::zeroed(1, 3).unwrap();
        let mut counts = [0u32; 3];
        let draws = 30_000;
        for _ in 0..draws {
            counts[select_action(&t, 0, &p, &mut rng).unwrap()] += 1;
        }
        for &c in &counts {
            let freq = f64::from(c) / f64::from(draws);
            assert!(
                (0.323..=0.343).contains(&freq),
                "frequency {freq} outside binomial interval"
            );
        }
    }

    #[test]
    fn select_action_deterministic_given_seed() {
        let p = LearningParams::default();
        let t = QTable::from_rows(&[vec![0.5, 0.1, 0.4]]).unwrap();
        let seq = |seed: u64| -> Vec<usize> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100)
                .map(|_| select_action(&t, 0, &p, &mut rng).unwrap())
                .collect()
        };
        assert_eq!(seq(3), seq(3));
        assert_ne!(seq(3), seq(4));
    }

    #[test]
    fn epsilon_decay_clamps_at_min() {
        let mut p = LearningParams {
            epsilon: 0.06,
            epsilon_decay: 0.5,
            epsilon_min: 0.05,
            ..LearningParams::default()
        };
        p.decay_epsilon();
        assert_eq!(p.epsilon, 0.05);
        p.decay_epsilon();
        assert_eq!(p.epsilon, 0.05);
    }

    #[test]
    fn param_validation_rejects_out_of_range() {
        let mut p = LearningParams::default();
        assert!(p.validate().is_ok());
        p.gamma = 1.0;
        assert!(p.validate().is_err());
        p.gamma = 0.9;
        p.epsilon_min = 0.9;
        assert!(p.validate().is_err());
    }
}
