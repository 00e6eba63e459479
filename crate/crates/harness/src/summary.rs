//! Post-run analysis of metrics CSVs: saturation point, dip detection,
//! and totals per node.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use dfrl_core::federation::NodeId;
use dfrl_core::metrics::MetricsRecord;

use crate::error::{HarnessError, Result};
use crate::metrics_io::read_csv;

/// Fraction of the final value a series may wander and still count as
/// saturated.
pub const SATURATION_BAND: f64 = 0.01;

/// Per-node summary of one metrics series.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSummary {
    pub node_id: NodeId,
    pub final_sum_q: f64,
    /// First iteration after which sum_q stays within 1% of the final
    /// value for the rest of the series.
    pub saturation_iteration: u64,
    /// Minimum sum_q observed at or after the first round boundary;
    /// `None` for runs without rounds.
    pub min_after_first_round: Option<f64>,
    /// True when a round write pushed sum_q below its pre-round value
    /// somewhere in the series (the maximum-method dip).
    pub dip_detected: bool,
    pub total_reward: f64,
    pub iterations: u64,
}

/// Summaries for every node found in the given CSVs.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub nodes: Vec<NodeSummary>,
}

impl fmt::Display for SummaryTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>7} {:>12} {:>14} {:>14} {:>6} {:>14}",
            "node", "final_sum_q", "saturation_it", "min_post_r1", "dip", "total_reward"
        )?;
        for n in &self.nodes {
            writeln!(
                f,
                "{:>7} {:>12.4} {:>14} {:>14} {:>6} {:>14.1}",
                n.node_id,
                n.final_sum_q,
                n.saturation_iteration,
                n.min_after_first_round
                    .map_or_else(|| "-".to_string(), |v| format!("{v:.4}")),
                n.dip_detected,
                n.total_reward,
            )?;
        }
        Ok(())
    }
}

/// Summarizes already-loaded records (they may span several nodes).
pub fn summarize_records(records: &[MetricsRecord]) -> Result<SummaryTable> {
    let mut by_node: BTreeMap<NodeId, Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        by_node.entry(r.node_id).or_default().push(r);
    }
    let mut nodes = Vec::new();
    for (node_id, mut series) in by_node {
        series.sort_by_key(|r| r.iteration);
        for pair in series.windows(2) {
            if pair[0].iteration >= pair[1].iteration {
                return Err(HarnessError::runtime(format!(
                    "node {node_id}: iterations not strictly increasing at {}",
                    pair[1].iteration
                )));
            }
        }
        let last = series.last().expect("non-empty series");
        let final_sum_q = last.sum_q;

        // Walk backwards: the saturation point is the first record from
        // which every later value stays inside the band.
        let band = SATURATION_BAND * final_sum_q.abs();
        let mut saturation_iteration = last.iteration;
        for r in series.iter().rev() {
            if (r.sum_q - final_sum_q).abs() <= band {
                saturation_iteration = r.iteration;
            } else {
                break;
            }
        }

        let min_after_first_round = series
            .iter()
            .filter(|r| r.round >= 1)
            .map(|r| r.sum_q)
            .fold(None, |acc: Option<f64>, v| {
                Some(acc.map_or(v, |a| a.min(v)))
            });
        let dip_detected = series
            .windows(2)
            .any(|pair| pair[1].round > pair[0].round && pair[1].sum_q < pair[0].sum_q);

        nodes.push(NodeSummary {
            node_id,
            final_sum_q,
            saturation_iteration,
            min_after_first_round,
            dip_detected,
            total_reward: last.cumulative_reward,
            iterations: last.iteration,
        });
    }
    Ok(SummaryTable { nodes })
}

/// Reads one or more CSVs and summarizes all contained nodes.
pub fn summarize(paths: &[impl AsRef<Path>]) -> Result<SummaryTable> {
    let mut records = Vec::new();
    for path in paths {
        records.extend(read_csv(path.as_ref())?);
    }
    if records.is_empty() {
        return Err(HarnessError::runtime("no records in the given CSVs"));
    }
    summarize_records(&records)
}
