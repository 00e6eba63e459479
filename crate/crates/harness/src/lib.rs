//! Experiment harness: config schema, in-process and TCP runners,
//! metrics CSVs, summaries, and the `dfrl` CLI.

pub mod cli;
pub mod error;
pub mod metrics_io;
pub mod plot;
pub mod runner;
pub mod spec;
pub mod summary;

pub use error::{HarnessError, Result};
pub use metrics_io::{emit_csv, read_csv, CSV_HEADER};
pub use runner::{run_experiment, ExperimentOutcome};
pub use spec::{paper_shape_spec, ExperimentSpec};
pub use summary::{summarize, summarize_records, NodeSummary, SummaryTable};
