//! Experiment specification: the TOML config schema, validation, and the
//! seed derivation that both the in-process runner and the node CLI use.
//!
//! Config keys:
//!
//! ```toml
//! master_seed = 42
//! iterations_total = 25000
//! metrics_every = 1          # optional, default 1
//! output_dir = "out"
//! # pace_ms = 64             # optional wall-clock pacing per iteration
//!
//! [federation]               # omit the whole section for standalone runs
//! method = "avg"             # avg | running-mean | max
//! respite_m = 500
//! rounds_max = 50            # optional, default iterations_total / respite_m
//! # algo_tag = "qlearning"   # optional agent tag: visit matching nodes only
//! # mode = "lockstep"        # lockstep | free-running
//! # stop_when_saturated = { window_rounds = 5, tolerance_pct = 0.5 }
//!
//! [[nodes]]
//! id = 1
//! algorithm = "qlearning"    # qlearning | sarsa
//! arena = { width = 12, height = 12, blocks = 1 }
//! # listen = "127.0.0.1:0"   # on every node -> run over TCP processes
//! # params = { alpha = 0.1, gamma = 0.9, epsilon = 0.3,
//! #            epsilon_decay = 0.9995, epsilon_min = 0.05 }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dfrl_core::aggregate::AggregationMethod;
use dfrl_core::arena::ArenaSpec;
use dfrl_core::federation::{filter_itinerary, NodeId};
use dfrl_core::rl::{Algorithm, LearningParams};
use dfrl_core::seed::{derive_node_seed, derive_stream_seed, STREAM_ARENA, STREAM_POLICY};

use crate::error::{HarnessError, Result};

fn default_metrics_every() -> u64 {
    1
}

/// Whether learners pause at respite boundaries for the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Deterministic: every node runs exactly `respite_m` iterations
    /// between rounds and pauses while the agent holds its table.
    #[default]
    Lockstep,
    /// Paper-style: the respite is timed off the first node only and the
    /// other learners keep running during the round. Not reproducible
    /// byte-for-byte.
    FreeRunning,
}

/// Early termination: stop running rounds once every federated node's
/// sum of Q-values has stayed within `tolerance_pct` percent across
/// `window_rounds` consecutive round boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationStop {
    pub window_rounds: u32,
    pub tolerance_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationSection {
    pub method: AggregationMethod,
    pub respite_m: u64,
    #[serde(default)]
    pub rounds_max: Option<u32>,
    #[serde(default)]
    pub algo_tag: Option<Algorithm>,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default)]
    pub stop_when_saturated: Option<SaturationStop>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArenaSection {
    pub width: usize,
    pub height: usize,
    pub blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSection {
    pub id: NodeId,
    pub algorithm: Algorithm,
    pub arena: ArenaSection,
    #[serde(default)]
    pub listen: Option<String>,
    #[serde(default)]
    pub params: Option<LearningParams>,
}

/// The whole experiment: nodes, schedule, and output location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub master_seed: u64,
    pub iterations_total: u64,
    #[serde(default = "default_metrics_every")]
    pub metrics_every: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub pace_ms: Option<u64>,
    #[serde(default)]
    pub federation: Option<FederationSection>,
    pub nodes: Vec<NodeSection>,
}

/// Seeds and arena fully derived for one node. This is the single place
/// the master seed is split, shared by the in-process runner and the
/// `node` CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedNode {
    pub node_id: NodeId,
    pub algorithm: Algorithm,
    pub node_seed: u64,
    pub arena: ArenaSpec,
    pub params: LearningParams,
    pub policy_seed: u64,
    pub listen: Option<String>,
}

/// Splits a node seed into the arena and policy streams.
pub fn split_node_seed(node_seed: u64) -> (u64, u64) {
    (
        derive_stream_seed(node_seed, STREAM_ARENA),
        derive_stream_seed(node_seed, STREAM_POLICY),
    )
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| HarnessError::config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(HarnessError::config("at least one node is required"));
        }
        if self.metrics_every == 0 {
            return Err(HarnessError::config("metrics_every must be at least 1"));
        }
        if self.iterations_total == 0 {
            return Err(HarnessError::config("iterations_total must be at least 1"));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if self.nodes[..i].iter().any(|n| n.id == node.id) {
                return Err(HarnessError::config(format!("duplicate node id {}", node.id)));
            }
            let arena = ArenaSpec {
                width: node.arena.width,
                height: node.arena.height,
                num_blocks: node.arena.blocks,
                seed: 0,
            };
            arena
                .build()
                .map_err(|e| HarnessError::config(format!("node {}: {e}", node.id)))?;
            if let Some(params) = &node.params {
                params
                    .validate()
                    .map_err(|e| HarnessError::config(format!("node {}: {e}", node.id)))?;
            }
        }
        let with_listen = self.nodes.iter().filter(|n| n.listen.is_some()).count();
        if with_listen != 0 && with_listen != self.nodes.len() {
            return Err(HarnessError::config(
                "either every node or no node may set a listen address",
            ));
        }
        if let Some(federation) = &self.federation {
            if federation.respite_m == 0 {
                return Err(HarnessError::config("respite_m must be at least 1"));
            }
            if federation.respite_m > self.iterations_total {
                return Err(HarnessError::config(
                    "respite_m exceeds iterations_total: no round would ever run",
                ));
            }
            if let Some(stop) = federation.stop_when_saturated {
                if with_listen != 0 {
                    return Err(HarnessError::config(
                        "stop_when_saturated is only supported in in-process mode",
                    ));
                }
                if stop.window_rounds == 0 || !(stop.tolerance_pct > 0.0) {
                    return Err(HarnessError::config(
                        "stop_when_saturated needs window_rounds >= 1 and tolerance_pct > 0",
                    ));
                }
            }
            // The itinerary must be constructible.
            self.itinerary()?;
            if federation.mode == RunMode::FreeRunning && with_listen == 0 {
                return Err(HarnessError::config(
                    "free-running mode requires TCP nodes; in-process runs are lockstep",
                ));
            }
        }
        Ok(())
    }

    /// True when the experiment runs as separate TCP node processes.
    pub fn is_tcp(&self) -> bool {
        self.nodes.iter().all(|n| n.listen.is_some()) && !self.nodes.is_empty()
    }

    /// Applies the federation tag filter to the configured node order.
    pub fn itinerary(&self) -> Result<Vec<NodeId>> {
        let federation = self
            .federation
            .as_ref()
            .ok_or_else(|| HarnessError::config("standalone spec has no itinerary"))?;
        let pairs: Vec<(NodeId, Algorithm)> =
            self.nodes.iter().map(|n| (n.id, n.algorithm)).collect();
        filter_itinerary(&pairs, federation.algo_tag)
            .map_err(|e| HarnessError::config(e.to_string()))
    }

    /// Number of rounds the schedule will run.
    pub fn rounds_total(&self) -> u32 {
        match &self.federation {
            None => 0,
            Some(federation) => {
                let by_length = self.iterations_total / federation.respite_m;
                let by_length = u32::try_from(by_length).unwrap_or(u32::MAX);
                federation
                    .rounds_max
                    .map_or(by_length, |max| max.min(by_length))
            }
        }
    }

    /// Derives per-node seeds, arena, and parameters.
    pub fn derived_nodes(&self) -> Vec<DerivedNode> {
        self.nodes
            .iter()
            .map(|node| {
                let node_seed = derive_node_seed(self.master_seed, node.id);
                let (arena_seed, policy_seed) = split_node_seed(node_seed);
                DerivedNode {
                    node_id: node.id,
                    algorithm: node.algorithm,
                    node_seed,
                    arena: ArenaSpec {
                        width: node.arena.width,
                        height: node.arena.height,
                        num_blocks: node.arena.blocks,
                        seed: arena_seed,
                    },
                    params: node.params.unwrap_or_default(),
                    policy_seed,
                    listen: node.listen.clone(),
                }
            })
            .collect()
    }

    /// The CSV path for one node's metrics.
    pub fn csv_path(&self, node_id: NodeId) -> PathBuf {
        self.output_dir.join(format!("node_{node_id}.csv"))
    }
}

/// Builds the paper-shaped five-node spec: obstacle blocks 1/2/2/4/0,
/// respite 500, with everything else configurable.
pub fn paper_shape_spec(
    master_seed: u64,
    iterations_total: u64,
    method: AggregationMethod,
    algorithm: Algorithm,
    output_dir: PathBuf,
) -> ExperimentSpec {
    let blocks = [1usize, 2, 2, 4, 0];
    ExperimentSpec {
        master_seed,
        iterations_total,
        metrics_every: 1,
        output_dir,
        pace_ms: None,
        federation: Some(FederationSection {
            method,
            respite_m: 500,
            rounds_max: None,
            algo_tag: None,
            mode: RunMode::Lockstep,
            stop_when_saturated: None,
        }),
        nodes: blocks
            .iter()
            .enumerate()
            .map(|(i, &blocks)| NodeSection {
                id: i as NodeId + 1,
                algorithm,
                arena: ArenaSection {
                    width: 12,
                    height: 12,
                    blocks,
                },
                listen: None,
                params: None,
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        master_seed = 7
        iterations_total = 100
        output_dir = "out"

        [[nodes]]
        id = 1
        algorithm = "qlearning"
        arena = { width = 8, height = 8, blocks = 2 }
    "#;

    #[test]
    fn minimal_standalone_config_parses() {
        let spec = ExperimentSpec::from_toml_str(MINIMAL).unwrap();
        assert_eq!(spec.metrics_every, 1);
        assert!(spec.federation.is_none());
        assert!(!spec.is_tcp());
        assert_eq!(spec.rounds_total(), 0);
    }

    #[test]
    fn federated_config_parses_and_derives() {
        let text = r#"
            master_seed = 42
            iterations_total = 1000
            output_dir = "out"

            [federation]
            method = "max"
            respite_m = 100

            [[nodes]]
            id = 1
            algorithm = "qlearning"
            arena = { width = 8, height = 8, blocks = 1 }

            [[nodes]]
            id = 2
            algorithm = "sarsa"
            arena = { width = 8, height = 8, blocks = 0 }
            params = { alpha = 0.2, gamma = 0.8, epsilon = 0.5, epsilon_decay = 0.999, epsilon_min = 0.01 }
        "#;
        let spec = ExperimentSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.rounds_total(), 10);
        assert_eq!(spec.itinerary().unwrap(), vec![1, 2]);

        let derived = spec.derived_nodes();
        assert_eq!(derived.len(), 2);
        assert_ne!(derived[0].node_seed, derived[1].node_seed);
        assert_ne!(derived[0].arena.seed, derived[0].policy_seed);
        assert_eq!(derived[1].params.alpha, 0.2);
        // Node seeds do not depend on the other nodes in the spec.
        assert_eq!(
            derived[0].node_seed,
            derive_node_seed(spec.master_seed, 1)
        );
    }

    #[test]
    fn config_errors_are_reported() {
        assert!(ExperimentSpec::from_toml_str("not toml at all = [").is_err());

        let dup = MINIMAL.to_string()
            + r#"
            [[nodes]]
            id = 1
            algorithm = "sarsa"
            arena = { width = 8, height = 8, blocks = 0 }
        "#;
        let err = ExperimentSpec::from_toml_str(&dup).unwrap_err();
        assert!(err.to_string().contains("duplicate node id"));

        let infeasible = MINIMAL.replace("blocks = 2", "blocks = 99");
        assert!(ExperimentSpec::from_toml_str(&infeasible).is_err());
    }

    #[test]
    fn mixed_listen_addresses_rejected() {
        let text = r#"
            master_seed = 1
            iterations_total = 10
            output_dir = "out"

            [[nodes]]
            id = 1
            algorithm = "qlearning"
            arena = { width = 6, height = 6, blocks = 0 }
            listen = "127.0.0.1:0"

            [[nodes]]
            id = 2
            algorithm = "qlearning"
            arena = { width = 6, height = 6, blocks = 0 }
        "#;
        let err = ExperimentSpec::from_toml_str(text).unwrap_err();
        assert!(matches!(err, HarnessError::Config(_)));
    }

    #[test]
    fn tag_filter_flows_into_itinerary() {
        let text = r#"
            master_seed = 1
            iterations_total = 100
            output_dir = "out"

            [federation]
            method = "avg"
            respite_m = 10
            algo_tag = "sarsa"

            [[nodes]]
            id = 1
            algorithm = "qlearning"
            arena = { width = 6, height = 6, blocks = 0 }

            [[nodes]]
            id = 2
            algorithm = "sarsa"
            arena = { width = 6, height = 6, blocks = 0 }
        "#;
        let spec = ExperimentSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.itinerary().unwrap(), vec![2]);
    }

    #[test]
    fn paper_shape_has_expected_arenas() {
        let spec = paper_shape_spec(
            1,
            25_000,
            AggregationMethod::PairwiseAverage,
            Algorithm::QLearning,
            PathBuf::from("out"),
        );
        spec.validate().unwrap();
        let blocks: Vec<usize> = spec.nodes.iter().map(|n| n.arena.blocks).collect();
        assert_eq!(blocks, vec![1, 2, 2, 4, 0]);
        assert_eq!(spec.rounds_total(), 50);
    }
}
