//! Q-table aggregation operators used by the federation pass.
//!
//! The forward pass folds node tables into the agent payload one at a
//! time, so the choice of binary operator decides the weighting of the
//! final aggregate: the pairwise average weights later nodes more
//! heavily, the running mean weights all nodes uniformly, and the
//! elementwise maximum is order-independent.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::table::{QTable, TableError};

/// Binary operator used to fold a visited table into the agent payload.
/// The serialized names are the config strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregationMethod {
    /// Entrywise `(payload + local) / 2`.
    #[serde(rename = "avg")]
    PairwiseAverage,
    /// Entrywise `(count*payload + local) / (count + 1)`; uniform mean.
    #[serde(rename = "running-mean")]
    RunningMean,
    /// Entrywise maximum.
    #[serde(rename = "max")]
    ElementwiseMax,
}

impl AggregationMethod {
    /// Folds `local` into `payload`. `payload_count` is the number of
    /// tables already folded into the payload (only the running mean
    /// uses it).
    pub fn fold(
        self,
        payload: &QTable,
        payload_count: u32,
        local: &QTable,
    ) -> Result<QTable, TableError> {
        match self {
            AggregationMethod::PairwiseAverage => pairwise_average(payload, local),
            AggregationMethod::RunningMean => running_mean(payload, payload_count, local),
            AggregationMethod::ElementwiseMax => elementwise_max(payload, local),
        }
    }
}

impl fmt::Display for AggregationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AggregationMethod::PairwiseAverage => "avg",
            AggregationMethod::RunningMean => "running-mean",
            AggregationMethod::ElementwiseMax => "max",
        };
        f.write_str(s)
    }
}

impl FromStr for AggregationMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "avg" => Ok(AggregationMethod::PairwiseAverage),
            "running-mean" => Ok(AggregationMethod::RunningMean),
            "max" => Ok(AggregationMethod::ElementwiseMax),
            other => Err(format!(
                "unknown aggregation method {other:?}, expected avg | running-mean | max"
            )),
        }
    }
}

fn zip_tables(
    a: &QTable,
    b: &QTable,
    op: impl Fn(f64, f64) -> f64,
) -> Result<QTable, TableError> {
    a.check_same_dimensions(b)?;
    let values = a
        .values()
        .iter()
        .zip(b.values().iter())
        .map(|(&x, &y)| op(x, y))
        .collect();
    QTable::from_values(a.num_states(), a.num_actions(), values)
}

/// Entrywise mean of two tables.
pub fn pairwise_average(a: &QTable, b: &QTable) -> Result<QTable, TableError> {
    zip_tables(a, b, |x, y| (x + y) / 2.0)
}

/// Entrywise `(count_a*a + b) / (count_a + 1)`: extends a uniform mean of
/// `count_a` tables by one more. The caller tracks the count.
pub fn running_mean(a: &QTable, count_a: u32, b: &QTable) -> Result<QTable, TableError> {
    let n = f64::from(count_a);
    zip_tables(a, b, |x, y| (n * x + y) / (n + 1.0))
}

/// Entrywise maximum of two tables.
pub fn elementwise_max(a: &QTable, b: &QTable) -> Result<QTable, TableError> {
    zip_tables(a, b, f64::max)
}
