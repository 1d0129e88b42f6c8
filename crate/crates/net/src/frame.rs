//! `MEM1` framing: magic, message type, little-endian length, encoded Map payload.

use std::io::{self, Read, Write};

use epimem_core::idf::{codec, DataObject};

use crate::error::NetError;

pub const MAGIC: [u8; 4] = *b"MEM1";
pub const HEADER_LEN: usize = 9;
/// Frames above this size are rejected before allocation.
pub const MAX_PAYLOAD: u32 = 256 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Commit = 1,
    CommitStatus = 2,
    Query = 3,
    QueryResult = 4,
    Subscribe = 5,
    Notify = 6,
    Unsubscribe = 7,
    MnsRegister = 8,
    MnsResolve = 9,
    MnsResult = 10,
    Admin = 11,
    Error = 255,
}

impl MsgType {
    pub fn from_u8(b: u8) -> Option<Self> {
        use MsgType::*;
        Some(match b {
            1 => Commit,
            2 => CommitStatus,
            3 => Query,
            4 => QueryResult,
            5 => Subscribe,
            6 => Notify,
            7 => Unsubscribe,
            8 => MnsRegister,
            9 => MnsResolve,
            10 => MnsResult,
            11 => Admin,
            255 => Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub ty: MsgType,
    pub payload: DataObject,
}

impl Frame {
    pub fn new(ty: MsgType, payload: DataObject) -> Self {
        Frame { ty, payload }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let body = codec::encode(&self.payload);
        let mut out = Vec::with_capacity(HEADER_LEN + body.len());
        out.extend_from_slice(&MAGIC);
        out.push(self.ty as u8);
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
        out
    }
}

/// Writes one frame with a single `write_all`, so concurrent writers holding a
/// lock never interleave partial frames.
pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.to_bytes())?;
    w.flush()
}

/// Reads one frame. `Ok(None)` on a clean end of stream before any header byte.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, NetError> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(NetError::Io(io::ErrorKind::UnexpectedEof.into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(NetError::Io(e)),
        }
    }
    if header[..4] != MAGIC {
        return Err(NetError::Protocol(format!("bad magic {:02X?}", &header[..4])));
    }
    let ty =
        MsgType::from_u8(header[4]).ok_or_else(|| NetError::Protocol(format!("unknown message type {}", header[4])))?;
    let len = u32::from_le_bytes(header[5..9].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(NetError::Protocol(format!("frame of {len} bytes exceeds limit")));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    let payload = codec::decode(&body)?;
    if !matches!(payload, DataObject::Map(_)) {
        return Err(NetError::Protocol("frame payload is not a map".into()));
    }
    Ok(Some(Frame { ty, payload }))
}
