//! Driver-side transport: migrating an agent to a node and the remote
//! [`NodeAccess`] implementation used to run federation rounds over TCP.

use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use thiserror::Error;

use dfrl_core::federation::{
    FederationError, MobileAgent, NodeAccess, NodeId, NodeStatus, VisitEffect,
};
use dfrl_core::table::QTable;

use crate::wire::{read_frame, write_frame, MessageBody, WireError, WireMessage, PROTOCOL_VERSION};

/// Default migration timeout.
pub const MIGRATE_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("cannot reach {target}: {source}")]
    Connect {
        target: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("node refused request: {0}")]
    Refused(String),
    #[error("expected {expected} reply, got {got}")]
    UnexpectedReply { expected: &'static str, got: String },
    #[error("protocol version mismatch: ours {ours}, peer {theirs}")]
    VersionMismatch { ours: u32, theirs: u32 },
}

fn connect(target: &str, timeout: Duration) -> Result<TcpStream, TransportError> {
    let mut last_err = None;
    let addrs = target
        .to_socket_addrs()
        .map_err(|source| TransportError::Connect {
            target: target.to_string(),
            source,
        })?;
    for addr in addrs {
        match TcpStream::connect_timeout(&addr, timeout) {
            Ok(stream) => {
                stream.set_read_timeout(Some(timeout)).ok();
                stream.set_write_timeout(Some(timeout)).ok();
                stream.set_nodelay(true).ok();
                return Ok(stream);
            }
            Err(err) => last_err = Some(err),
        }
    }
    Err(TransportError::Connect {
        target: target.to_string(),
        source: last_err
            .unwrap_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, "no address")),
    })
}

fn request_over(
    stream: &mut TcpStream,
    body: MessageBody,
) -> Result<MessageBody, TransportError> {
    write_frame(stream, &WireMessage::new(body))?;
    let reply = read_frame(stream)?;
    if reply.protocol_version != PROTOCOL_VERSION {
        return Err(TransportError::VersionMismatch {
            ours: PROTOCOL_VERSION,
            theirs: reply.protocol_version,
        });
    }
    if let MessageBody::Status {
        error: Some(error), ..
    } = &reply.body
    {
        return Err(TransportError::Refused(error.clone()));
    }
    Ok(reply.body)
}

/// Sends the agent to `target` and returns the updated agent from the
/// acknowledgement. One connection per call; see [`RemoteNode`] for the
/// persistent-connection driver.
pub fn migrate(
    agent: MobileAgent,
    target: &str,
    timeout: Duration,
) -> Result<MobileAgent, TransportError> {
    let mut stream = connect(target, timeout)?;
    match request_over(&mut stream, MessageBody::AgentArrive { agent })? {
        MessageBody::AgentAck { agent } => Ok(agent),
        other => Err(TransportError::UnexpectedReply {
            expected: "AGENT_ACK",
            got: format!("{other:?}"),
        }),
    }
}

/// A federated node reached over TCP. Connects lazily and keeps the
/// connection for the lifetime of the handle.
pub struct RemoteNode {
    node_id: NodeId,
    target: String,
    timeout: Duration,
    stream: Option<TcpStream>,
}

impl RemoteNode {
    pub fn new(node_id: NodeId, target: impl Into<String>, timeout: Duration) -> Self {
        Self {
            node_id,
            target: target.into(),
            timeout,
            stream: None,
        }
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    fn request(&mut self, body: MessageBody) -> Result<MessageBody, TransportError> {
        if self.stream.is_none() {
            self.stream = Some(connect(&self.target, self.timeout)?);
        }
        let stream = self.stream.as_mut().expect("just connected");
        let result = request_over(stream, body);
        if result.is_err() {
            // Drop a possibly broken connection; the next request redials.
            self.stream = None;
        }
        result
    }

    fn transport_err(&self, err: TransportError) -> FederationError {
        FederationError::Transport {
            node_id: self.node_id,
            message: err.to_string(),
        }
    }
}

impl NodeAccess for RemoteNode {
    fn node_id(&self) -> NodeId {
        self.node_id
    }

    fn visit(&mut self, agent: &mut MobileAgent) -> Result<VisitEffect, FederationError> {
        let effect = agent.pending_effect();
        let reply = self
            .request(MessageBody::AgentArrive {
                agent: agent.clone(),
            })
            .map_err(|e| self.transport_err(e))?;
        match reply {
            MessageBody::AgentAck { agent: updated } => {
                *agent = updated;
                Ok(effect)
            }
            other => Err(self.transport_err(TransportError::UnexpectedReply {
                expected: "AGENT_ACK",
                got: format!("{other:?}"),
            })),
        }
    }

    fn status(&mut self) -> Result<NodeStatus, FederationError> {
        match self
            .request(MessageBody::StatusReq)
            .map_err(|e| self.transport_err(e))?
        {
            MessageBody::Status { status, .. } => Ok(status),
            other => Err(self.transport_err(TransportError::UnexpectedReply {
                expected: "STATUS",
                got: format!("{other:?}"),
            })),
        }
    }

    fn table_snapshot(&mut self) -> Result<QTable, FederationError> {
        match self
            .request(MessageBody::TableSnapshotReq)
            .map_err(|e| self.transport_err(e))?
        {
            MessageBody::TableSnapshot { table, .. } => Ok(table),
            other => Err(self.transport_err(TransportError::UnexpectedReply {
                expected: "TABLE_SNAPSHOT",
                got: format!("{other:?}"),
            })),
        }
    }
}
