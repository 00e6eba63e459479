//! Length-prefixed wire protocol for agent migration.
//!
//! A frame is a 4-byte big-endian body length followed by a UTF-8 JSON
//! body. Encoding goes through a canonical value tree, so object keys are
//! always sorted and floats use the shortest decimal that round-trips the
//! 64-bit value exactly: encoding the same message twice yields the same
//! bytes, and a Q-table survives a round trip bit for bit.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

use dfrl_core::federation::{MobileAgent, NodeId, NodeStatus};
use dfrl_core::table::QTable;

/// Current protocol version; peers with a different version are refused.
pub const PROTOCOL_VERSION: u32 = 1;

/// Upper bound on the body of a single frame.
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

/// Size of the frame length prefix.
pub const FRAME_HEADER_BYTES: usize = 4;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame body of {declared} bytes exceeds the {MAX_BODY_BYTES}-byte limit")]
    Oversize { declared: usize },
    #[error("malformed frame body at byte offset {offset}: {detail}")]
    Parse { offset: usize, detail: String },
    #[error("failed to serialize message: {0}")]
    Serialize(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Envelope for every protocol message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub protocol_version: u32,
    #[serde(flatten)]
    pub body: MessageBody,
}

/// The message kinds of the migration protocol. Unknown `msg_type`
/// strings are rejected at decode time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "msg_type", content = "body", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageBody {
    /// An agent migrates in and requests a table transaction.
    AgentArrive { agent: MobileAgent },
    /// Reply carrying the agent after its visit was applied.
    AgentAck { agent: MobileAgent },
    TableSnapshotReq,
    TableSnapshot { node_id: NodeId, table: QTable },
    StatusReq,
    /// Node status; `error` is set when a request was refused.
    Status {
        status: NodeStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

impl WireMessage {
    pub fn new(body: MessageBody) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            body,
        }
    }
}

/// Encodes a message into one frame. The body is canonical JSON: keys
/// sorted, floats in shortest round-trip form.
pub fn encode_message(message: &WireMessage) -> Result<Vec<u8>, WireError> {
    let value = serde_json::to_value(message).map_err(|e| WireError::Serialize(e.to_string()))?;
    let body = value.to_string();
    if body.len() > MAX_BODY_BYTES {
        return Err(WireError::Oversize {
            declared: body.len(),
        });
    }
    let mut frame = Vec::with_capacity(FRAME_HEADER_BYTES + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(body.as_bytes());
    Ok(frame)
}

/// Outcome of feeding a byte buffer to the decoder.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoded {
    /// One complete frame was parsed; `consumed` bytes were used.
    Message {
        message: WireMessage,
        consumed: usize,
    },
    /// The buffer holds a prefix of a valid frame; more bytes are needed.
    Incomplete,
}

/// Decodes the first frame in `buf`. Every input yields exactly one of
/// message, incomplete, or error; oversize declarations are rejected
/// before any allocation.
pub fn decode_message(buf: &[u8]) -> Result<Decoded, WireError> {
    if buf.len() < FRAME_HEADER_BYTES {
        return Ok(Decoded::Incomplete);
    }
    let declared = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if declared > MAX_BODY_BYTES {
        return Err(WireError::Oversize { declared });
    }
    if buf.len() < FRAME_HEADER_BYTES + declared {
        return Ok(Decoded::Incomplete);
    }
    let body = &buf[FRAME_HEADER_BYTES..FRAME_HEADER_BYTES + declared];
    let text = std::str::from_utf8(body).map_err(|e| WireError::Parse {
        offset: e.valid_up_to(),
        detail: "body is not valid UTF-8".into(),
    })?;
    let message: WireMessage = serde_json::from_str(text).map_err(|e| WireError::Parse {
        // Single-line JSON, so the column is the byte offset.
        offset: e.column().saturating_sub(1),
        detail: e.to_string(),
    })?;
    Ok(Decoded::Message {
        message,
        consumed: FRAME_HEADER_BYTES + declared,
    })
}

/// Writes one framed message to a stream.
pub fn write_frame<W: Write>(writer: &mut W, message: &WireMessage) -> Result<(), WireError> {
    let frame = encode_message(message)?;
    writer.write_all(&frame)?;
    writer.flush()?;
    Ok(())
}

/// Reads exactly one framed message from a stream.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<WireMessage, WireError> {
    let mut header = [0u8; FRAME_HEADER_BYTES];
    reader.read_exact(&mut header)?;
    let declared = u32::from_be_bytes(header) as usize;
    if declared > MAX_BODY_BYTES {
        return Err(WireError::Oversize { declared });
    }
    let mut body = vec![0u8; declared];
    reader.read_exact(&mut body)?;
    match decode_message(&[&header[..], &body[..]].concat())? {
        Decoded::Message { message, .. } => Ok(message),
        Decoded::Incomplete => unreachable!("full frame was read"),
    }
}
