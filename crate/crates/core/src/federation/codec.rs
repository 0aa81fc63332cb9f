//! Binary framing of coordinator/worker messages.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "DEES"
//!      4     1  protocol version (1)
//!      5     1  message kind
//!      6     4  node id            (u32 LE)
//!     10     4  payload rows       (u32 LE)
//!     14     4  payload cols       (u32 LE)
//!     18     8  payload length     (u64 LE, bytes)
//!     26     …  payload, row-major IEEE-754 binary64 LE
//! ```
//!
//! Header-only frames carry `rows = cols = 0` and a zero length, 26 bytes total.

use super::FederationError;
use crate::linalg::Matrix;

pub const MAGIC: [u8; 4] = *b"DEES";
pub const PROTOCOL_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 26;

/// Bytes taken by one `rows × cols` payload.
pub fn payload_len(rows: usize, cols: usize) -> usize {
    rows * cols * 8
}

/// Total frame size for a message carrying a `rows × cols` payload.
pub fn frame_len(rows: usize, cols: usize) -> usize {
    HEADER_LEN + payload_len(rows, cols)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageKind {
    Hello = 0,
    SubmitSolution = 1,
    BroadcastReference = 2,
    SubmitAligned = 3,
    Done = 4,
    Error = 5,
}

impl MessageKind {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => Self::Hello,
            1 => Self::SubmitSolution,
            2 => Self::BroadcastReference,
            3 => Self::SubmitAligned,
            4 => Self::Done,
            5 => Self::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub kind: MessageKind,
    pub node_id: u32,
    pub payload: Option<Matrix>,
    pub protocol_version: u8,
}

impl Message {
    pub fn header_only(kind: MessageKind, node_id: u32) -> Self {
        Self {
            kind,
            node_id,
            payload: None,
            protocol_version: PROTOCOL_VERSION,
        }
    }

    pub fn with_payload(kind: MessageKind, node_id: u32, payload: Matrix) -> Self {
        Self {
            kind,
            node_id,
            payload: Some(payload),
            protocol_version: PROTOCOL_VERSION,
        }
    }
}

/// Parsed fixed-size header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub version: u8,
    pub kind: MessageKind,
    pub node_id: u32,
    pub rows: u32,
    pub cols: u32,
    pub payload_len: u64,
}

fn malformed(reason: &str) -> FederationError {
    FederationError::MalformedFrame(reason.to_string())
}

pub fn decode_header(bytes: &[u8]) -> Result<FrameHeader, FederationError> {
    if bytes.len() < HEADER_LEN {
        return Err(malformed("truncated header"));
    }
    if bytes[0..4] != MAGIC {
        return Err(malformed("bad magic"));
    }
    let kind = MessageKind::from_byte(bytes[5]).ok_or_else(|| malformed("unknown message kind"))?;
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let header = FrameHeader {
        version: bytes[4],
        kind,
        node_id: u32_at(6),
        rows: u32_at(10),
        cols: u32_at(14),
        payload_len: u64::from_le_bytes(bytes[18..26].try_into().expect("8 bytes")),
    };
    let expected = (header.rows as u64)
        .checked_mul(header.cols as u64)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| malformed("dimension overflow"))?;
    if (header.rows == 0) != (header.cols == 0) {
        return Err(malformed("payload with a zero dimension"));
    }
    if expected != header.payload_len {
        return Err(malformed("payload length does not match dimensions"));
    }
    Ok(header)
}

pub fn encode_message(msg: &Message) -> Result<Vec<u8>, FederationError> {
    let (rows, cols) = msg.payload.as_ref().map_or((0, 0), |p| p.shape());
    if rows > u32::MAX as usize || cols > u32::MAX as usize {
        return Err(malformed("dimension overflow"));
    }
    if msg.payload.is_some() && (rows == 0 || cols == 0) {
        return Err(malformed("payload with a zero dimension"));
    }
    let mut out = Vec::with_capacity(frame_len(rows, cols));
    out.extend_from_slice(&MAGIC);
    out.push(msg.protocol_version);
    out.push(msg.kind as u8);
    out.extend_from_slice(&msg.node_id.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out.extend_from_slice(&(payload_len(rows, cols) as u64).to_le_bytes());
    if let Some(p) = &msg.payload {
        for i in 0..rows {
            for j in 0..cols {
                out.extend_from_slice(&p[(i, j)].to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_message(bytes: &[u8]) -> Result<Message, FederationError> {
    let header = decode_header(bytes)?;
    let body = &bytes[HEADER_LEN..];
    let len = header.payload_len as usize;
    if body.len() < len {
        return Err(malformed("truncated payload"));
    }
    if body.len() > len {
        return Err(malformed("trailing bytes after payload"));
    }
    let payload = if header.rows == 0 {
        None
    } else {
        let (rows, cols) = (header.rows as usize, header.cols as usize);
        let mut m = Matrix::zeros(rows, cols);
        for (k, chunk) in body.chunks_exact(8).enumerate() {
            m[(k / cols, k % cols)] = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        Some(m)
    };
    Ok(Message {
        kind: header.kind,
        node_id: header.node_id,
        payload,
        protocol_version: header.version,
    })
}
