//! Loopback integration tests: daemon lifecycle, migration semantics,
//! lockstep rounds over TCP vs in-process, and table-access atomicity.

use std::time::Duration;

use dfrl_core::aggregate::AggregationMethod;
use dfrl_core::arena::ArenaSpec;
use dfrl_core::federation::{run_round, AgentPhase, MobileAgent, NodeAccess, NodeId};
use dfrl_core::learner::Learner;
use dfrl_core::rl::{Algorithm, LearningParams};
use dfrl_core::table::QTable;
use dfrl_transport::node::{node_serve, LockstepConfig, NodeConfig, NodeServer};
use dfrl_transport::{migrate, MessageBody, RemoteNode, WireMessage};

const SENSOR_STATES: usize = 8;
const ACTIONS: usize = 3;

fn arena(seed: u64) -> ArenaSpec {
    ArenaSpec {
        width: 12,
        height: 12,
        num_blocks: 2,
        seed,
    }
}

fn config(node_id: NodeId, iterations_total: u64, lockstep: Option<LockstepConfig>) -> NodeConfig {
    NodeConfig {
        node_id,
        listen: "127.0.0.1:0".into(),
        algorithm: Algorithm::QLearning,
        arena: arena(u64::from(node_id)),
        params: LearningParams::default(),
        policy_seed: 1000 + u64::from(node_id),
        iterations_total,
        metrics_every: 1,
        lockstep,
        pace_ms: None,
    }
}

fn serve(cfg: NodeConfig) -> NodeServer {
    node_serve(cfg).expect("bind loopback")
}

fn remote(server: &NodeServer, node_id: NodeId) -> RemoteNode {
    RemoteNode::new(
        node_id,
        server.local_addr().to_string(),
        Duration::from_secs(5),
    )
}

#[test]
fn status_echoes_local_state() {
    let server = serve(config(4, 100, None));
    let records = server.wait_done();
    assert_eq!(records.len(), 100);

    let mut node = remote(&server, 4);
    let status = node.status().unwrap();
    assert_eq!(status.node_id, 4);
    assert_eq!(status.algorithm, Algorithm::QLearning);
    assert_eq!(status.iteration, 100);
    assert_eq!(status.sum_q, records.last().unwrap().sum_q);
    server.shutdown();
}

#[test]
fn migrate_advances_agent_position() {
    let server = serve(config(1, 0, None));
    server.wait_done();

    let agent = MobileAgent::new(
        0,
        vec![1, 2],
        AggregationMethod::PairwiseAverage,
        None,
        SENSOR_STATES,
        ACTIONS,
    )
    .unwrap();
    let updated = migrate(
        agent,
        &server.local_addr().to_string(),
        Duration::from_secs(5),
    )
    .unwrap();
    assert_eq!(updated.position, 1);
    assert_eq!(updated.phase, AgentPhase::Forward);
    server.shutdown();
}

#[test]
fn migrate_to_unreachable_port_fails_within_timeout() {
    // Bind-then-drop to get a port nobody listens on.
    let port = {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().port()
    };
    let agent = MobileAgent::new(
        0,
        vec![1],
        AggregationMethod::PairwiseAverage,
        None,
        1,
        1,
    )
    .unwrap();
    let started = std::time::Instant::now();
    let err = migrate(agent, &format!("127.0.0.1:{port}"), Duration::from_secs(2)).unwrap_err();
    assert!(started.elapsed() < Duration::from_secs(10), "timed out late");
    let message = err.to_string();
    assert!(message.contains("cannot reach"), "unexpected error {message}");
}

#[test]
fn forward_visit_reads_and_backward_visit_writes() {
    let server = serve(config(2, 50, None));
    server.wait_done();
    let mut node = remote(&server, 2);

    let before = node.table_snapshot().unwrap();
    let mut agent = MobileAgent::new(
        0,
        vec![1, 2, 3],
        AggregationMethod::ElementwiseMax,
        None,
         SENSOR_STATES,
        ACTIONS,
    )
    .unwrap();
    // Forward, non-final: the local table must not change.
    agent.position = 1;
    agent.payload_count = 1;
    node.visit(&mut agent).unwrap();
    assert_eq!(agent.position, 2);
    assert!(node.table_snapshot().unwrap().bit_identical(&before));

    // Backward: the local table becomes the payload.
    let mut distribution = QTable::zeroed(SENSOR_STATES, ACTIONS).unwrap();
    distribution.set(3, 1, 42.0).unwrap();
    let mut agent = MobileAgent::new(
        0,
        vec![1, 2, 3],
        AggregationMethod::ElementwiseMax,
        None,
        SENSOR_STATES,
        ACTIONS,
    )
    .unwrap();
    agent.phase = AgentPhase::Backward;
    agent.position = 1;
    agent.payload = distribution.clone();
    node.visit(&mut agent).unwrap();
    assert_eq!(agent.position, 0);
    assert!(node.table_snapshot().unwrap().bit_identical(&distribution));
    server.shutdown();
}

#[test]
fn version_mismatch_is_refused_with_status_error() {
    use std::io::Write;

    let server = serve(config(9, 0, None));
    server.wait_done();

    let mut stream = std::net::TcpStream::connect(server.local_addr()).unwrap();
    let msg = WireMessage {
        protocol_version: 99,
        body: MessageBody::StatusReq,
    };
    let frame = dfrl_transport::encode_message(&msg).unwrap();
    stream.write_all(&frame).unwrap();
    let reply = dfrl_transport::wire::read_frame(&mut stream).unwrap();
    match reply.body {
        MessageBody::Status { error: Some(e), .. } => {
            assert!(e.contains("version mismatch"), "unexpected error {e}");
        }
        other => panic!("expected STATUS error, got {other:?}"),
    }
    server.shutdown();
}

/// Same seeds, same schedule: a lockstep federation over TCP must land in
/// exactly the same agent and table state as driving the learners
/// directly in process.
#[test]
fn tcp_and_in_process_rounds_are_bit_identical() {
    let respite = 50;
    let rounds = 2;
    let total = 150;
    let method = AggregationMethod::PairwiseAverage;

    // In-process reference.
    let mut learners: Vec<Learner> = (1..=3)
        .map(|id| {
            Learner::new(
                id,
                Algorithm::QLearning,
                &arena(u64::from(id)),
                LearningParams::default(),
                1000 + u64::from(id),
            )
            .unwrap()
        })
        .collect();
    let mut reference_agent = MobileAgent::new(
        0,
        vec![1, 2, 3],
        method,
        None,
        SENSOR_STATES,
        ACTIONS,
    )
    .unwrap();
    for _ in 0..rounds {
        for learner in &mut learners {
            for _ in 0..respite {
                learner.step();
            }
        }
        run_round(&mut reference_agent, &mut learners).unwrap();
    }
    for learner in &mut learners {
        for _ in 0..(total - rounds * respite) {
            learner.step();
        }
    }

    // TCP run with the same configuration.
    let servers: Vec<NodeServer> = (1..=3)
        .map(|id| {
            serve(config(
                id,
                total as u64,
                Some(LockstepConfig {
                    respite_m: respite as u64,
                    rounds_max: rounds as u32,
                }),
            ))
        })
        .collect();
    let mut remotes: Vec<RemoteNode> = servers
        .iter()
        .zip(1..=3)
        .map(|(server, id)| remote(server, id))
        .collect();
    let mut tcp_agent = MobileAgent::new(
        0,
        vec![1, 2, 3],
        method,
        None,
        SENSOR_STATES,
        ACTIONS,
    )
    .unwrap();
    for round in 1..=rounds {
        // Wait for every node to park at the boundary so pre-round sums
        // are sampled at the same iteration as in process.
        for node in &mut remotes {
            loop {
                let status = node.status().unwrap();
                if status.iteration >= (round * respite) as u64 {
                    break;
                }
                std::thread::sleep(Duration::from_millis(2));
            }
        }
        run_round(&mut tcp_agent, &mut remotes).unwrap();
    }

    assert_eq!(tcp_agent, reference_agent);
    for (node, learner) in remotes.iter_mut().zip(&learners) {
        // Nodes may still be running the trailing iterations; wait.
        loop {
            if node.status().unwrap().iteration >= total as u64 {
                break;
            }
            std::thread::sleep(Duration::from_millis(2));
        }
        assert!(node.table_snapshot().unwrap().bit_identical(learner.table()));
    }
    for server in servers {
        server.shutdown();
    }
}

/// Concurrent wholesale writes and snapshot reads: a snapshot must never
/// observe a half-applied write.
#[test]
fn snapshots_never_observe_torn_writes() {
    let server = serve(config(1, 0, None));
    server.wait_done();
    let addr = server.local_addr().to_string();

    let writer = |value: f64, addr: String| {
        std::thread::spawn(move || {
            let mut node = RemoteNode::new(1, addr, Duration::from_secs(5));
            for _ in 0..100 {
                let mut agent = MobileAgent::new(
                    9,
                    vec![1],
                    AggregationMethod::ElementwiseMax,
                    None,
                    SENSOR_STATES,
                    ACTIONS,
                )
                .unwrap();
                // A backward visit at position 0 replaces the table with
                // the payload wholesale.
                agent.phase = AgentPhase::Backward;
                agent.payload = QTable::from_values(
                    SENSOR_STATES,
                    ACTIONS,
                    vec![value; SENSOR_STATES * ACTIONS],
                )
                .unwrap();
                node.visit(&mut agent).unwrap();
            }
        })
    };

    let w1 = writer(1.0, addr.clone());
    let w2 = writer(2.0, addr.clone());

    let mut reader = RemoteNode::new(1, addr, Duration::from_secs(5));
    for _ in 0..300 {
        let snapshot = reader.table_snapshot().unwrap();
        let first = snapshot.values()[0];
        assert!(
            snapshot.values().iter().all(|&v| v == first),
            "torn table observed: {:?}",
            snapshot.values()
        );
    }

    w1.join().unwrap();
    w2.join().unwrap();
    server.shutdown();
}
