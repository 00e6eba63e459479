//! Node daemon and TCP migration transport.
//!
//! Agents travel fully serialized: a visit is one `AGENT_ARRIVE` frame
//! carrying the agent state and one `AGENT_ACK` frame carrying it back
//! after the node applied the visit against its table. There is no code
//! mobility and no dynamic discovery; itineraries are static config.

pub mod client;
pub mod node;
pub mod wire;

pub use client::{migrate, RemoteNode, TransportError, MIGRATE_TIMEOUT};
pub use node::{node_serve, LockstepConfig, NodeConfig, NodeError, NodeServer};
pub use wire::{
    decode_message, encode_message, Decoded, MessageBody, WireError, WireMessage, MAX_BODY_BYTES,
    PROTOCOL_VERSION,
};
