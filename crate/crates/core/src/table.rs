//! Dense tabular action-value storage.
//!
//! A [`QTable`] is the unit of exchange in the federation pass: learners
//! update it in place, the mobile agent carries one as payload, and the
//! aggregation operators combine pairs of them entrywise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by table construction and indexed access.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("state index {index} out of range (table has {num_states} states)")]
    StateOutOfRange { index: usize, num_states: usize },
    #[error("action index {index} out of range (table has {num_actions} actions)")]
    ActionOutOfRange { index: usize, num_actions: usize },
    #[error("table dimensions must be positive, got {num_states}x{num_actions}")]
    EmptyDimensions { num_states: usize, num_actions: usize },
    #[error("value count {got} does not match {num_states}x{num_actions}")]
    ValueCountMismatch {
        num_states: usize,
        num_actions: usize,
        got: usize,
    },
    #[error("non-finite value {value} at state={state}, action={action}")]
    NonFiniteValue {
        state: usize,
        action: usize,
        value: f64,
    },
    #[error("dimension mismatch: {a_states}x{a_actions} vs {b_states}x{b_actions}")]
    DimensionMismatch {
        a_states: usize,
        a_actions: usize,
        b_states: usize,
        b_actions: usize,
    },
}

/// Dense |S|x|A| matrix of action-values, stored row-major.
///
/// Every entry is finite; a freshly constructed table is all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    /// Creates a table with every entry initialised to 0.0.
    pub fn zeroed(num_states: usize, num_actions: usize) -> Result<Self, TableError> {
        if num_states == 0 || num_actions == 0 {
            return Err(TableError::EmptyDimensions {
                num_states,
                num_actions,
            });
        }
        Ok(Self {
            num_states,
            num_actions,
            values: vec![0.0; num_states * num_actions],
        })
    }

    /// Builds a table from row-major values, validating count and finiteness.
    pub fn from_values(
        num_states: usize,
        num_actions: usize,
        values: Vec<f64>,
    ) -> Result<Self, TableError> {
        if num_states == 0 || num_actions == 0 {
            return Err(TableError::EmptyDimensions {
                num_states,
                num_actions,
            });
        }
        if values.len() != num_states * num_actions {
            return Err(TableError::ValueCountMismatch {
                num_states,
                num_actions,
                got: values.len(),
            });
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(TableError::NonFiniteValue {
                    state: i / num_actions,
                    action: i % num_actions,
                    value: v,
                });
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            values,
        })
    }

    /// Builds a table from nested rows (one inner slice per state).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TableError> {
        let num_states = rows.len();
        let num_actions = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(num_states * num_actions);
        for row in rows {
            if row.len() != num_actions {
                return Err(TableError::ValueCountMismatch {
                    num_states,
                    num_actions,
                    got: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::from_values(num_states, num_actions, values)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Row-major view of all entries.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn same_dimensions(&self, other: &Self) -> bool {
        self.num_states == other.num_states && self.num_actions == other.num_actions
    }

    /// Returns `DimensionMismatch` unless both tables have identical shape.
    pub fn check_same_dimensions(&self, other: &Self) -> Result<(), TableError> {
        if self.same_dimensions(other) {
            Ok(())
        } else {
            Err(TableError::DimensionMismatch {
                a_states: self.num_states,
                a_actions: self.num_actions,
                b_states: other.num_states,
                b_actions: other.num_actions,
            })
        }
    }

    fn check_state(&self, state: usize) -> Result<(), TableError> {
        if state < self.num_states {
            Ok(())
        } else {
            Err(TableError::StateOutOfRange {
                index: state,
                num_states: self.num_states,
            })
        }
    }

    fn check_action(&self, action: usize) -> Result<(), TableError> {
        if action < self.num_actions {
            Ok(())
        } else {
            Err(TableError::ActionOutOfRange {
                index: action,
                num_actions: self.num_actions,
            })
        }
    }

    pub fn get(&self, state: usize, action: usize) -> Result<f64, TableError> {
        self.check_state(state)?;
        self.check_action(action)?;
        Ok(self.values[state * self.num_actions + action])
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) -> Result<(), TableError> {
        self.check_state(state)?;
        self.check_action(action)?;
        if !value.is_finite() {
            return Err(TableError::NonFiniteValue {
                state,
                action,
                value,
            });
        }
        self.values[state * self.num_actions + action] = value;
        Ok(())
    }

    /// The action-value row for one state.
    pub fn row(&self, state: usize) -> Result<&[f64], TableError> {
        self.check_state(state)?;
        let start = state * self.num_actions;
        Ok(&self.values[start..start + self.num_actions])
    }

    /// Greedy action for `state`, ties broken by lowest action index.
    pub fn argmax(&self, state: usize) -> Result<usize, TableError> {
        let row = self.row(state)?;
        let mut best = 0;
        for (a, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = a;
            }
        }
        Ok(best)
    }

    /// Maximum action-value in the row for `state`.
    pub fn row_max(&self, state: usize) -> Result<f64, TableError> {
        let row = self.row(state)?;
        Ok(row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Sum of all entries in fixed row-major order.
    pub fn sum_q(&self) -> f64 {
        self.values.iter().sum()
    }

    /// True when both tables are entry-for-entry bit-identical.
    pub fn bit_identical(&self, other: &Self) -> bool {
        self.same_dimensions(other)
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Greedy action per state, with the lowest-index tie-break.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub greedy_action: Vec<usize>,
}

impl PolicySnapshot {
    /// Extracts the greedy policy from a table.
    pub fn from_table(table: &QTable) -> Self {
        let greedy_action = (0..table.num_states())
            .map(|s| table.argmax(s).expect("state in range"))
            .collect();
        Self { greedy_action }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_table_is_all_zero() {
        let t = QTable::zeroed(8, 3).unwrap();
        assert_eq!(t.num_states(), 8);
        assert_eq!(t.num_actions(), 3);
        assert!(t.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_dimensions_rejected() {
        assert!(QTable::zeroed(0, 3).is_err());
        assert!(QTable::zeroed(3, 0).is_err());
    }

    #[test]
    fn non_finite_values_rejected() {
        let err = QTable::from_values(1, 2, vec![0.0, f64::NAN]).unwrap_err();
        assert!(matches!(
            err,
            TableError::NonFiniteValue {
                state: 0,
                action: 1,
                ..
            }
        ));
        let mut t = QTable::zeroed(1, 2).unwrap();
        assert!(t.set(0, 0, f64::INFINITY).is_err());
    }

    #[test]
    fn out_of_range_access_names_index() {
        let t = QTable::zeroed(2, 2).unwrap();
        assert_eq!(
            t.get(5, 0),
            Err(TableError::StateOutOfRange {
                index: 5,
                num_states: 2
            })
        );
        assert_eq!(
            t.get(0, 7),
            Err(TableError::ActionOutOfRange {
                index: 7,
                num_actions: 2
            })
        );
    }

    #[test]
    fn sum_q_examples() {
        let zero = QTable::zeroed(4, 4).unwrap();
        assert_eq!(zero.sum_q(), 0.0);

        let t = QTable::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(t.sum_q(), 10.0);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let t = QTable::from_rows(&[vec![5.0, 5.0, 1.0]]).unwrap();
        assert_eq!(t.argmax(0).unwrap(), 0);
        let t = QTable::from_rows(&[vec![1.0, 3.0, 2.0]]).unwrap();
        assert_eq!(t.argmax(0).unwrap(), 1);
    }

    #[test]
    fn greedy_policy_examples() {
        let t = QTable::zeroed(1, 2).unwrap();
        assert_eq!(PolicySnapshot::from_table(&t).greedy_action, vec![0]);

        let t = QTable::from_rows(&[vec![1.0, 2.0], vec![7.0, 3.0]]).unwrap();
        assert_eq!(PolicySnapshot::from_table(&t).greedy_action, vec![1, 0]);
    }
}
