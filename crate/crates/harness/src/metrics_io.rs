//! CSV emission and parsing for metrics rows.
//!
//! Floats are written with the shortest decimal representation that
//! round-trips the 64-bit value exactly (Rust's default float display),
//! so a file is byte-stable for a given record sequence.

use std::io::{BufWriter, Write};
use std::path::Path;

use dfrl_core::metrics::MetricsRecord;

use crate::error::{HarnessError, Result};

pub const CSV_HEADER: &str = "node_id,iteration,round,sum_q,cumulative_reward";

/// Writes records to `path`, ordered by (node_id, iteration).
pub fn emit_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut sorted: Vec<&MetricsRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.node_id, r.iteration));

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{CSV_HEADER}")?;
    for r in sorted {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.node_id, r.iteration, r.round, r.sum_q, r.cumulative_reward
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a metrics CSV back into records.
pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::runtime(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CSV_HEADER => {}
        other => {
            return Err(HarnessError::runtime(format!(
                "{}: malformed header {other:?}",
                path.display()
            )))
        }
    }
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(HarnessError::runtime(format!(
                "{}:{}: expected 5 fields, got {}",
                path.display(),
                lineno + 2,
                fields.len()
            )));
        }
        let parse_err = |what: &str| {
            HarnessError::runtime(format!(
                "{}:{}: malformed {what}",
                path.display(),
                lineno + 2
            ))
        };
        records.push(MetricsRecord {
            node_id: fields[0].parse().map_err(|_| parse_err("node_id"))?,
            iteration: fields[1].parse().map_err(|_| parse_err("iteration"))?,
            round: fields[2].parse().map_err(|_| parse_err("round"))?,
            sum_q: fields[3].parse().map_err(|_| parse_err("sum_q"))?,
            cumulative_reward: fields[4].parse().map_err(|_| parse_err("cumulative_reward"))?,
        });
    }
    Ok(records)
}
