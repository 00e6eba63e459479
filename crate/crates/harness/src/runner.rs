//! Experiment execution: an in-process lockstep coordinator, and a
//! launcher that runs the same experiment as one daemon process per node
//! plus an agent driver. With the same master seed both produce
//! byte-identical metrics CSVs in lockstep mode.

use std::collections::VecDeque;
use std::io::BufRead;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde::Serialize;

use dfrl_core::arena::{NUM_ACTIONS, NUM_SENSOR_STATES};
use dfrl_core::federation::{
    run_round, run_round_verified, FederationError, MobileAgent, NodeAccess, NodeId, RoundReport,
};
use dfrl_core::learner::Learner;
use dfrl_core::metrics::MetricsRecord;
use dfrl_transport::RemoteNode;

use crate::error::{HarnessError, Result};
use crate::metrics_io::emit_csv;
use crate::spec::{DerivedNode, ExperimentSpec, RunMode, SaturationStop};

/// Line printed by the `node` command once its listener is bound.
pub const LISTENING_PREFIX: &str = "LISTENING ";
/// Line printed by the `node` command after its CSV is on disk.
pub const METRICS_WRITTEN_PREFIX: &str = "METRICS_WRITTEN ";

/// How long the launcher waits for nodes to reach a respite boundary.
const BOUNDARY_TIMEOUT: Duration = Duration::from_secs(120);
/// Retries for a failed round at the same boundary before giving up.
const ROUND_RETRY_LIMIT: u32 = 3;

/// What an experiment produced.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub csv_paths: Vec<PathBuf>,
    pub manifest_path: PathBuf,
    pub round_reports: Vec<RoundReport>,
    pub rounds_completed: u32,
    pub round_failures: Vec<RoundFailure>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundFailure {
    pub round: u32,
    pub error: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    transport: &'static str,
    spec: &'a ExperimentSpec,
    derived_nodes: &'a [DerivedNode],
    rounds_completed: u32,
    round_failures: &'a [RoundFailure],
    csv_files: Vec<String>,
}

fn write_manifest(
    spec: &ExperimentSpec,
    derived: &[DerivedNode],
    transport: &'static str,
    rounds_completed: u32,
    round_failures: &[RoundFailure],
) -> Result<PathBuf> {
    std::fs::create_dir_all(&spec.output_dir)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        transport,
        spec,
        derived_nodes: derived,
        rounds_completed,
        round_failures,
        csv_files: spec
            .nodes
            .iter()
            .map(|n| format!("node_{}.csv", n.id))
            .collect(),
    };
    let path = spec.output_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| HarnessError::runtime(e.to_string()))?;
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Runs the experiment, dispatching on whether nodes carry listen
/// addresses (TCP processes) or not (in-process).
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    if spec.is_tcp() {
        run_tcp(spec)
    } else {
        run_in_process(spec)
    }
}

/// Tracks consecutive saturated boundaries for the early-stop heuristic.
struct SaturationTracker {
    stop: Option<SaturationStop>,
    history: VecDeque<Vec<f64>>,
}

impl SaturationTracker {
    fn new(stop: Option<SaturationStop>) -> Self {
        Self {
            stop,
            history: VecDeque::new(),
        }
    }

    /// Feeds the post-round sums of one boundary; true means stop.
    fn saturated(&mut self, sums: Vec<f64>) -> bool {
        let Some(stop) = self.stop else { return false };
        self.history.push_back(sums);
        let needed = stop.window_rounds as usize + 1;
        while self.history.len() > needed {
            self.history.pop_front();
        }
        if self.history.len() < needed {
            return false;
        }
        let tol = stop.tolerance_pct / 100.0;
        self.history.iter().zip(self.history.iter().skip(1)).all(
            |(previous, current)| {
                previous
                    .iter()
                    .zip(current)
                    .all(|(p, c)| (c - p).abs() <= tol * c.abs())
            },
        )
    }
}

fn run_in_process(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let derived = spec.derived_nodes();
    let mut learners = derived
        .iter()
        .map(|d| Learner::new(d.node_id, d.algorithm, &d.arena, d.params, d.policy_seed))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let n = learners.len();
    let mut rounds_applied = vec![0u32; n];
    let mut records: Vec<Vec<MetricsRecord>> = vec![Vec::new(); n];
    let mut reports = Vec::new();
    let mut failures: Vec<RoundFailure> = Vec::new();

    let pace = spec.pace_ms.map(Duration::from_millis);
    let step_node = |learner: &mut Learner| {
        learner.step();
        if let Some(pace) = pace {
            std::thread::sleep(pace);
        }
    };

    let mut fatal: Option<FederationError> = None;
    if let Some(federation) = &spec.federation {
        let itinerary = spec.itinerary()?;
        let is_participant: Vec<bool> = derived
            .iter()
            .map(|d| itinerary.contains(&d.node_id))
            .collect();
        let mut agent = MobileAgent::new(
            0,
            itinerary,
            federation.method,
            federation.algo_tag,
            NUM_SENSOR_STATES,
            NUM_ACTIONS,
        )
        .map_err(|e| HarnessError::config(e.to_string()))?;
        let rounds_total = spec.rounds_total();
        let respite = federation.respite_m;
        let mut saturation = SaturationTracker::new(federation.stop_when_saturated);

        'rounds: for round in 1..=rounds_total {
            for (k, learner) in learners.iter_mut().enumerate() {
                for step_index in 1..=respite {
                    step_node(learner);
                    let boundary = step_index == respite && is_participant[k];
                    if !boundary && learner.iteration() % spec.metrics_every == 0 {
                        records[k].push(learner.metrics_record(rounds_applied[k]));
                    }
                }
            }

            // Participants in config order form the itinerary order.
            let mut participants: Vec<&mut Learner> = learners
                .iter_mut()
                .zip(&is_participant)
                .filter(|(_, p)| **p)
                .map(|(l, _)| l)
                .collect();
            let round_ok = match run_round_verified(&mut agent, &mut participants) {
                Ok(report) => {
                    println!("{report}");
                    reports.push(report);
                    true
                }
                Err(err) => {
                    failures.push(RoundFailure {
                        round,
                        error: err.to_string(),
                    });
                    fatal = Some(err);
                    false
                }
            };

            let mut post_sums = Vec::new();
            for (k, learner) in learners.iter_mut().enumerate() {
                if !is_participant[k] {
                    continue;
                }
                if round_ok {
                    rounds_applied[k] += 1;
                }
                if learner.iteration() % spec.metrics_every == 0 {
                    records[k].push(learner.metrics_record(rounds_applied[k]));
                }
                post_sums.push(learner.sum_q());
            }
            if !round_ok {
                break 'rounds;
            }
            if saturation.saturated(post_sums) {
                break 'rounds;
            }
        }
    }

    if fatal.is_none() {
        for (k, learner) in learners.iter_mut().enumerate() {
            while learner.iteration() < spec.iterations_total {
                step_node(learner);
                if learner.iteration() % spec.metrics_every == 0 {
                    records[k].push(learner.metrics_record(rounds_applied[k]));
                }
            }
        }
    }

    // Partial CSVs are flushed even when a round failed.
    let mut csv_paths = Vec::with_capacity(n);
    for (d, node_records) in derived.iter().zip(&records) {
        let path = spec.csv_path(d.node_id);
        emit_csv(node_records, &path)?;
        csv_paths.push(path);
    }
    let rounds_completed = reports.len() as u32;
    let manifest_path = write_manifest(spec, &derived, "in-process", rounds_completed, &failures)?;

    if let Some(err) = fatal {
        return Err(HarnessError::runtime(format!(
            "round failed in in-process mode: {err}"
        )));
    }
    Ok(ExperimentOutcome {
        csv_paths,
        manifest_path,
        round_reports: reports,
        rounds_completed,
        round_failures: failures,
    })
}

/// Kills child node processes when the launcher unwinds.
struct NodeProcess {
    node_id: NodeId,
    child: Child,
    stdout: std::io::BufReader<std::process::ChildStdout>,
}

impl NodeProcess {
    fn expect_line(&mut self, prefix: &str) -> Result<String> {
        let mut line = String::new();
        loop {
            line.clear();
            let read = self
                .stdout
                .read_line(&mut line)
                .map_err(|e| HarnessError::runtime(format!("node {} stdout: {e}", self.node_id)))?;
            if read == 0 {
                return Err(HarnessError::runtime(format!(
                    "node {} exited before printing {prefix:?}",
                    self.node_id
                )));
            }
            if let Some(rest) = line.trim_end().strip_prefix(prefix) {
                return Ok(rest.to_string());
            }
        }
    }
}

struct NodeFleet {
    processes: Vec<NodeProcess>,
}

impl Drop for NodeFleet {
    fn drop(&mut self) {
        for p in &mut self.processes {
            let _ = p.child.kill();
            let _ = p.child.wait();
        }
    }
}

fn spawn_node(exe: &std::path::Path, spec: &ExperimentSpec, d: &DerivedNode, lockstep_rounds: u32) -> Result<NodeProcess> {
    let listen = d
        .listen
        .as_deref()
        .ok_or_else(|| HarnessError::config(format!("node {} lacks a listen address", d.node_id)))?;
    let mut cmd = Command::new(exe);
    cmd.arg("node")
        .arg("--node-id")
        .arg(d.node_id.to_string())
        .arg("--listen")
        .arg(listen)
        .arg("--algo")
        .arg(d.algorithm.to_string())
        .arg("--arena")
        .arg(format!(
            "{}x{}x{}",
            d.arena.width, d.arena.height, d.arena.num_blocks
        ))
        .arg("--seed")
        .arg(d.node_seed.to_string())
        .arg("--params")
        .arg(format!(
            "{},{},{},{},{}",
            d.params.alpha,
            d.params.gamma,
            d.params.epsilon,
            d.params.epsilon_decay,
            d.params.epsilon_min
        ))
        .arg("--iterations")
        .arg(spec.iterations_total.to_string())
        .arg("--metrics-every")
        .arg(spec.metrics_every.to_string())
        .arg("--metrics-out")
        .arg(spec.csv_path(d.node_id))
        .stdout(Stdio::piped())
        .stdin(Stdio::null());
    if lockstep_rounds > 0 {
        let federation = spec.federation.as_ref().expect("lockstep implies federation");
        cmd.arg("--respite-m")
            .arg(federation.respite_m.to_string())
            .arg("--rounds-max")
            .arg(lockstep_rounds.to_string());
    }
    if let Some(pace_ms) = spec.pace_ms {
        cmd.arg("--pace-ms").arg(pace_ms.to_string());
    }
    let mut child = cmd
        .spawn()
        .map_err(|e| HarnessError::runtime(format!("cannot spawn node {}: {e}", d.node_id)))?;
    let stdout = child
        .stdout
        .take()
        .ok_or_else(|| HarnessError::runtime("child stdout not captured"))?;
    Ok(NodeProcess {
        node_id: d.node_id,
        child,
        stdout: std::io::BufReader::new(stdout),
    })
}

/// Polls node statuses until every given node has reached
/// `target_iteration` (lockstep nodes park there).
pub fn wait_for_boundary(remotes: &mut [RemoteNode], target_iteration: u64) -> Result<()> {
    let started = Instant::now();
    for node in remotes.iter_mut() {
        loop {
            let status = node
                .status()
                .map_err(|e| HarnessError::runtime(e.to_string()))?;
            if status.iteration >= target_iteration {
                break;
            }
            if started.elapsed() > BOUNDARY_TIMEOUT {
                return Err(HarnessError::runtime(format!(
                    "node {} stuck at iteration {} waiting for {target_iteration}",
                    status.node_id, status.iteration
                )));
            }
            std::thread::sleep(Duration::from_millis(2));
        }
    }
    Ok(())
}

fn run_tcp(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let derived = spec.derived_nodes();
    let rounds_total = spec.rounds_total();
    let lockstep = spec
        .federation
        .as_ref()
        .map_or(false, |f| f.mode == RunMode::Lockstep);
    let itinerary = if spec.federation.is_some() {
        spec.itinerary()?
    } else {
        Vec::new()
    };

    let exe = std::env::current_exe()
        .map_err(|e| HarnessError::runtime(format!("cannot locate own binary: {e}")))?;
    std::fs::create_dir_all(&spec.output_dir)?;

    let mut fleet = NodeFleet {
        processes: Vec::new(),
    };
    for d in &derived {
        let participates = itinerary.contains(&d.node_id);
        let lockstep_rounds = if lockstep && participates {
            rounds_total
        } else {
            0
        };
        fleet
            .processes
            .push(spawn_node(&exe, spec, d, lockstep_rounds)?);
    }

    // Collect the actual bound addresses.
    let mut addresses = Vec::with_capacity(fleet.processes.len());
    for p in &mut fleet.processes {
        addresses.push((p.node_id, p.expect_line(LISTENING_PREFIX)?));
    }

    let mut reports = Vec::new();
    let mut failures: Vec<RoundFailure> = Vec::new();
    if let Some(federation) = &spec.federation {
        let mut remotes: Vec<RemoteNode> = itinerary
            .iter()
            .map(|id| {
                let (_, addr) = addresses
                    .iter()
                    .find(|(node_id, _)| node_id == id)
                    .expect("itinerary node was spawned");
                RemoteNode::new(*id, addr.clone(), dfrl_transport::MIGRATE_TIMEOUT)
            })
            .collect();
        let mut agent = MobileAgent::new(
            0,
            itinerary.clone(),
            federation.method,
            federation.algo_tag,
            NUM_SENSOR_STATES,
            NUM_ACTIONS,
        )
        .map_err(|e| HarnessError::config(e.to_string()))?;

        for round in 1..=rounds_total {
            let boundary = u64::from(round) * federation.respite_m;
            if lockstep {
                wait_for_boundary(&mut remotes, boundary)?;
            } else {
                // Paper-style: the respite is timed off the first node.
                wait_for_boundary(&mut remotes[..1], boundary)?;
            }
            let mut attempt = 0;
            loop {
                match run_round(&mut agent, &mut remotes) {
                    Ok(report) => {
                        println!("{report}");
                        reports.push(report);
                        break;
                    }
                    Err(err) => {
                        attempt += 1;
                        failures.push(RoundFailure {
                            round,
                            error: err.to_string(),
                        });
                        if !lockstep {
                            // Free-running nodes are not parked; skip to
                            // the next respite.
                            break;
                        }
                        if attempt >= ROUND_RETRY_LIMIT {
                            let _ = write_manifest(
                                spec,
                                &derived,
                                "tcp",
                                reports.len() as u32,
                                &failures,
                            );
                            return Err(HarnessError::runtime(format!(
                                "round {round} failed after {attempt} attempts: {err}"
                            )));
                        }
                        std::thread::sleep(Duration::from_millis(200));
                    }
                }
            }
        }
    }

    // Wait for every node to finish and write its CSV.
    let mut csv_paths = Vec::with_capacity(fleet.processes.len());
    for p in &mut fleet.processes {
        let path = p.expect_line(METRICS_WRITTEN_PREFIX)?;
        csv_paths.push(PathBuf::from(path));
    }

    let rounds_completed = reports.len() as u32;
    let manifest_path = write_manifest(spec, &derived, "tcp", rounds_completed, &failures)?;
    Ok(ExperimentOutcome {
        csv_paths,
        manifest_path,
        round_reports: reports,
        rounds_completed,
        round_failures: failures,
    })
}
