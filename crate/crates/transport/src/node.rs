//! The node daemon: one learner context plus one network acceptor
//! context, sharing the Q-table under a mutex. A transaction is one
//! learner step or one agent visit, so a snapshot can never observe a
//! half-applied update.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use dfrl_core::arena::ArenaSpec;
use dfrl_core::federation::{NodeAccess, NodeId, NodeStatus, VisitEffect};
use dfrl_core::learner::{Learner, LearnerError};
use dfrl_core::metrics::MetricsRecord;
use dfrl_core::rl::{Algorithm, LearningParams};

use crate::wire::{read_frame, write_frame, MessageBody, WireError, WireMessage, PROTOCOL_VERSION};

#[derive(Debug, Error)]
pub enum NodeError {
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("failed to bind {listen}: {source}")]
    Bind {
        listen: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Lockstep schedule: the learner pauses at every multiple of
/// `respite_m` until the federation round for that boundary has been
/// distributed, for the first `rounds_max` boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockstepConfig {
    pub respite_m: u64,
    pub rounds_max: u32,
}

/// Everything a node daemon needs to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub node_id: NodeId,
    /// Bind address, `host:port`; port 0 picks an ephemeral port.
    pub listen: String,
    pub algorithm: Algorithm,
    pub arena: ArenaSpec,
    pub params: LearningParams,
    /// Seed for the action-selection stream.
    pub policy_seed: u64,
    pub iterations_total: u64,
    /// Sample a metrics row every this many iterations.
    pub metrics_every: u64,
    /// `None` runs free: the learner never waits for the agent.
    pub lockstep: Option<LockstepConfig>,
    /// Optional per-iteration pacing in milliseconds.
    pub pace_ms: Option<u64>,
}

struct NodeState {
    learner: Learner,
    records: Vec<MetricsRecord>,
    rounds_applied: u32,
    parked: bool,
    done: bool,
    shutdown: bool,
}

struct Shared {
    state: Mutex<NodeState>,
    changed: Condvar,
}

/// Handle to a running node daemon.
pub struct NodeServer {
    shared: Arc<Shared>,
    local_addr: SocketAddr,
    learner_thread: Option<JoinHandle<()>>,
    acceptor_thread: Option<JoinHandle<()>>,
}

/// Binds the listen address and starts the learner and acceptor threads.
pub fn node_serve(cfg: NodeConfig) -> Result<NodeServer, NodeError> {
    let learner = Learner::new(
        cfg.node_id,
        cfg.algorithm,
        &cfg.arena,
        cfg.params,
        cfg.policy_seed,
    )?;
    let listener = TcpListener::bind(&cfg.listen).map_err(|source| NodeError::Bind {
        listen: cfg.listen.clone(),
        source,
    })?;
    let local_addr = listener.local_addr().map_err(|source| NodeError::Bind {
        listen: cfg.listen.clone(),
        source,
    })?;

    let shared = Arc::new(Shared {
        state: Mutex::new(NodeState {
            learner,
            records: Vec::new(),
            rounds_applied: 0,
            parked: false,
            done: false,
            shutdown: false,
        }),
        changed: Condvar::new(),
    });

    let learner_shared = Arc::clone(&shared);
    let learner_cfg = cfg.clone();
    let learner_thread = std::thread::spawn(move || learner_loop(&learner_shared, &learner_cfg));

    let acceptor_shared = Arc::clone(&shared);
    let acceptor_cfg = cfg;
    let acceptor_thread =
        std::thread::spawn(move || acceptor_loop(&acceptor_shared, &acceptor_cfg, &listener));

    Ok(NodeServer {
        shared,
        local_addr,
        learner_thread: Some(learner_thread),
        acceptor_thread: Some(acceptor_thread),
    })
}

impl NodeServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Blocks until the learner has completed all configured iterations,
    /// then returns the sampled metrics rows. The daemon keeps serving
    /// status and snapshot requests afterwards.
    pub fn wait_done(&self) -> Vec<MetricsRecord> {
        let mut state = self.shared.state.lock().expect("node state poisoned");
        while !state.done && !state.shutdown {
            state = self.shared.changed.wait(state).expect("node state poisoned");
        }
        state.records.clone()
    }

    pub fn status(&self) -> NodeStatus {
        let mut state = self.shared.state.lock().expect("node state poisoned");
        state.learner.status().expect("local status is infallible")
    }

    /// Stops both threads and waits for them.
    pub fn shutdown(mut self) {
        {
            let mut state = self.shared.state.lock().expect("node state poisoned");
            state.shutdown = true;
            self.shared.changed.notify_all();
        }
        // Wake the acceptor out of accept().
        let _ = TcpStream::connect_timeout(&self.local_addr, Duration::from_secs(1));
        if let Some(t) = self.learner_thread.take() {
            let _ = t.join();
        }
        if let Some(t) = self.acceptor_thread.take() {
            let _ = t.join();
        }
    }
}

fn learner_loop(shared: &Shared, cfg: &NodeConfig) {
    let mut next_round: u32 = 1;
    loop {
        let mut state = shared.state.lock().expect("node state poisoned");
        if state.shutdown {
            return;
        }
        if state.learner.iteration() >= cfg.iterations_total {
            state.done = true;
            state.parked = true;
            shared.changed.notify_all();
            return;
        }

        state.learner.step();
        let iteration = state.learner.iteration();

        if let Some(lockstep) = cfg.lockstep {
            let due = next_round <= lockstep.rounds_max
                && iteration == u64::from(next_round) * lockstep.respite_m;
            if due {
                state.parked = true;
                shared.changed.notify_all();
                while state.rounds_applied < next_round && !state.shutdown {
                    state = shared.changed.wait(state).expect("node state poisoned");
                }
                state.parked = false;
                next_round += 1;
                if state.shutdown {
                    return;
                }
            }
        }

        // Boundary rows are sampled after the round above, so they
        // already carry the distributed aggregate.
        if iteration % cfg.metrics_every == 0 {
            let rounds = state.rounds_applied;
            let record = state.learner.metrics_record(rounds);
            state.records.push(record);
        }
        drop(state);

        if let Some(pace_ms) = cfg.pace_ms {
            std::thread::sleep(Duration::from_millis(pace_ms));
        }
    }
}

fn acceptor_loop(shared: &Arc<Shared>, cfg: &NodeConfig, listener: &TcpListener) {
    for stream in listener.incoming() {
        if shared
            .state
            .lock()
            .expect("node state poisoned")
            .shutdown
        {
            return;
        }
        let Ok(stream) = stream else { continue };
        let shared = Arc::clone(shared);
        let cfg = cfg.clone();
        // Connection handlers serialize on the state mutex; they exit
        // when the peer closes its end.
        std::thread::spawn(move || connection_loop(&shared, &cfg, stream));
    }
}

fn connection_loop(shared: &Shared, cfg: &NodeConfig, mut stream: TcpStream) {
    loop {
        let request = match read_frame(&mut stream) {
            Ok(message) => message,
            Err(_) => return,
        };
        let reply = handle_request(shared, cfg, request);
        if write_frame(&mut stream, &reply).is_err() {
            return;
        }
    }
}

fn status_of(state: &mut MutexGuard<'_, NodeState>) -> NodeStatus {
    state.learner.status().expect("local status is infallible")
}

fn status_reply(state: &mut MutexGuard<'_, NodeState>, error: Option<String>) -> WireMessage {
    WireMessage::new(MessageBody::Status {
        status: status_of(state),
        error,
    })
}

fn handle_request(shared: &Shared, cfg: &NodeConfig, request: WireMessage) -> WireMessage {
    let mut state = shared.state.lock().expect("node state poisoned");

    if request.protocol_version != PROTOCOL_VERSION {
        return status_reply(
            &mut state,
            Some(format!(
                "protocol version mismatch: node speaks {PROTOCOL_VERSION}, peer sent {}",
                request.protocol_version
            )),
        );
    }

    match request.body {
        MessageBody::StatusReq => status_reply(&mut state, None),
        MessageBody::TableSnapshotReq => WireMessage::new(MessageBody::TableSnapshot {
            node_id: cfg.node_id,
            table: state.learner.table().clone(),
        }),
        MessageBody::AgentArrive { mut agent } => {
            // In lockstep mode the visit waits until the learner is
            // parked at its respite boundary (or finished).
            if cfg.lockstep.is_some() {
                while !state.parked && !state.done && !state.shutdown {
                    state = shared.changed.wait(state).expect("node state poisoned");
                }
                if state.shutdown {
                    return status_reply(&mut state, Some("node shutting down".into()));
                }
            }
            match state.learner.visit(&mut agent) {
                Ok(VisitEffect::Wrote) => {
                    state.rounds_applied += 1;
                    shared.changed.notify_all();
                    WireMessage::new(MessageBody::AgentAck { agent })
                }
                Ok(VisitEffect::ReadOnly) => WireMessage::new(MessageBody::AgentAck { agent }),
                Err(err) => status_reply(&mut state, Some(format!("visit refused: {err}"))),
            }
        }
        MessageBody::AgentAck { .. } | MessageBody::TableSnapshot { .. } | MessageBody::Status { .. } => {
            status_reply(
                &mut state,
                Some("unexpected reply-type message sent to node".into()),
            )
        }
    }
}
