//! Wire framing.
//!
//! ```text
//! length   u32  total frame length, prefix included
//! version  u8
//! msg_type u8
//! round    u32
//! sender   u16
//! receiver u16
//! slot     u32
//! payload  length - 18 bytes
//! ```
//!
//! All integers are big-endian.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

pub const VERSION: u8 = 1;
pub const PREFIX_LEN: usize = 4;
pub const HEADER_LEN: usize = 14;
pub const OVERHEAD: usize = PREFIX_LEN + HEADER_LEN;
/// Largest frame a reader accepts from a socket.
pub const MAX_FRAME: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("truncated frame: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("unsupported frame version {0}")]
    Version(u8),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("frame length {0} is invalid")]
    Length(u64),
}

#[repr(u8)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MsgType {
    Setup = 1,
    UnionShare = 2,
    UnionPartialSum = 3,
    UnionBroadcast = 4,
    ShareUpload = 5,
    ShareForward = 6,
    QueryUpload = 7,
    QueryForward = 8,
    ResponseUpload = 9,
    MaskedResponseDeliver = 10,
    Abort = 11,
}

impl MsgType {
    pub const ALL: [MsgType; 11] = [
        MsgType::Setup,
        MsgType::UnionShare,
        MsgType::UnionPartialSum,
        MsgType::UnionBroadcast,
        MsgType::ShareUpload,
        MsgType::ShareForward,
        MsgType::QueryUpload,
        MsgType::QueryForward,
        MsgType::ResponseUpload,
        MsgType::MaskedResponseDeliver,
        MsgType::Abort,
    ];

    pub fn from_u8(b: u8) -> Result<Self, FrameError> {
        Self::ALL
            .iter()
            .copied()
            .find(|t| *t as u8 == b)
            .ok_or(FrameError::UnknownType(b))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WireMessage {
    pub version: u8,
    pub msg_type: MsgType,
    pub round: u32,
    pub sender: u16,
    pub receiver: u16,
    pub slot: u32,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn new(msg_type: MsgType, round: u32, sender: u16, receiver: u16, slot: u32, payload: Vec<u8>) -> Self {
        Self {
            version: VERSION,
            msg_type,
            round,
            sender,
            receiver,
            slot,
            payload,
        }
    }

    pub fn frame_len(&self) -> usize {
        OVERHEAD + self.payload.len()
    }
}

pub fn encode_frame(msg: &WireMessage) -> Vec<u8> {
    let total = msg.frame_len();
    assert!(total <= u32::MAX as usize, "payload too large for one frame");
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&(total as u32).to_be_bytes());
    out.push(msg.version);
    out.push(msg.msg_type as u8);
    out.extend_from_slice(&msg.round.to_be_bytes());
    out.extend_from_slice(&msg.sender.to_be_bytes());
    out.extend_from_slice(&msg.receiver.to_be_bytes());
    out.extend_from_slice(&msg.slot.to_be_bytes());
    out.extend_from_slice(&msg.payload);
    out
}

/// Decodes one frame from the front of `bytes`, returning it with the number
/// of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(WireMessage, usize), FrameError> {
    if bytes.len() < PREFIX_LEN {
        return Err(FrameError::Truncated {
            needed: PREFIX_LEN,
            got: bytes.len(),
        });
    }
    let total = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    if total < OVERHEAD {
        return Err(FrameError::Length(total as u64));
    }
    if bytes.len() < total {
        return Err(FrameError::Truncated {
            needed: total,
            got: bytes.len(),
        });
    }
    Ok((decode_body(&bytes[PREFIX_LEN..total])?, total))
}

fn decode_body(b: &[u8]) -> Result<WireMessage, FrameError> {
    let version = b[0];
    if version != VERSION {
        return Err(FrameError::Version(version));
    }
    let be16 = |i: usize| u16::from_be_bytes([b[i], b[i + 1]]);
    let be32 = |i: usize| u32::from_be_bytes(b[i..i + 4].try_into().unwrap());
    Ok(WireMessage {
        version,
        msg_type: MsgType::from_u8(b[1])?,
        round: be32(2),
        sender: be16(6),
        receiver: be16(8),
        slot: be32(10),
        payload: b[HEADER_LEN..].to_vec(),
    })
}

/// Errors from reading frames off a byte stream.
#[derive(Debug, thiserror::Error)]
pub enum ReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream before any
/// byte of a new frame.
pub fn read_frame(r: &mut impl Read) -> Result<Option<(WireMessage, Vec<u8>)>, ReadError> {
    let mut prefix = [0u8; PREFIX_LEN];
    let mut got = 0;
    while got < PREFIX_LEN {
        match r.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => {
                return Err(FrameError::Truncated {
                    needed: PREFIX_LEN,
                    got,
                }
                .into())
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let total = u32::from_be_bytes(prefix) as usize;
    if !(OVERHEAD..=MAX_FRAME).contains(&total) {
        return Err(FrameError::Length(total as u64).into());
    }
    let mut frame = vec![0u8; total];
    frame[..PREFIX_LEN].copy_from_slice(&prefix);
    r.read_exact(&mut frame[PREFIX_LEN..]).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            ReadError::Frame(FrameError::Truncated { needed: total, got: PREFIX_LEN })
        } else {
            ReadError::Io(e)
        }
    })?;
    let msg = decode_body(&frame[PREFIX_LEN..])?;
    Ok(Some((msg, frame)))
}

pub fn write_frame(w: &mut impl Write, msg: &WireMessage) -> io::Result<usize> {
    let bytes = encode_frame(msg);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(bytes.len())
}
