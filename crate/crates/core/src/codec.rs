//! Deterministic binary encoding for wire messages and persisted state.
//!
//! All multi-byte integers are big-endian. Variable-length data is
//! length-prefixed with a `u32`. Top-level wire structures start with a
//! one-byte format version so incompatible peers fail fast instead of
//! misparsing. Encoding the same value always yields the same bytes, which
//! block hashes, transaction ids and the determinism tests rely on.

use thiserror::Error;

use crate::hash::Hash256;
use crate::types::{ChunkIndex, FileId, MinerId, SectorId};

/// Version byte for every externally visible wire structure.
pub const WIRE_VERSION: u8 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("unexpected end of input at byte {0}")]
    Eof(usize),
    #[error("trailing garbage: {0} bytes left after decode")]
    Trailing(usize),
    #[error("unsupported wire version {0}")]
    Version(u8),
    #[error("invalid enum tag {tag} for {what}")]
    Tag { what: &'static str, tag: u8 },
    #[error("length {0} exceeds limit {1}")]
    Oversize(usize, usize),
}

/// Anything with a canonical byte representation.
pub trait Encode {
    fn encode(&self, out: &mut Vec<u8>);

    fn encode_to_vec(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode(&mut out);
        out
    }
}

pub trait Decode: Sized {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError>;

    /// Decode a complete buffer, rejecting trailing bytes.
    fn decode_all(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(buf);
        let v = Self::decode(&mut r)?;
        if r.remaining() != 0 {
            return Err(CodecError::Trailing(r.remaining()));
        }
        Ok(v)
    }
}

/// Cursor over an input buffer.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::Eof(self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Check and consume the leading wire-version byte.
    pub fn version(&mut self) -> Result<(), CodecError> {
        let v = self.u8()?;
        if v != WIRE_VERSION {
            return Err(CodecError::Version(v));
        }
        Ok(())
    }
}

// Sanity bound for length prefixes; generous enough for any simulated
// payload, small enough to reject corrupt prefixes before allocating.
const MAX_LEN: usize = 1 << 30;

impl Encode for u8 {
    fn encode(&self, out: &mut Vec<u8>) {
        out.push(*self);
    }
}

impl Decode for u8 {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.u8()
    }
}

impl Encode for u16 {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_be_bytes());
    }
}

impl Decode for u16 {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.u16()
    }
}

impl Encode for u32 {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_be_bytes());
    }
}

impl Decode for u32 {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.u32()
    }
}

impl Encode for u64 {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_be_bytes());
    }
}

impl Decode for u64 {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.u64()
    }
}

impl Encode for bool {
    fn encode(&self, out: &mut Vec<u8>) {
        out.push(*self as u8);
    }
}

impl Decode for bool {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match r.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(CodecError::Tag { what: "bool", tag }),
        }
    }
}

impl Encode for Hash256 {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0);
    }
}

impl Decode for Hash256 {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Hash256(r.take(32)?.try_into().unwrap()))
    }
}

impl Encode for Vec<u8> {
    fn encode(&self, out: &mut Vec<u8>) {
        (self.len() as u32).encode(out);
        out.extend_from_slice(self);
    }
}

impl Decode for Vec<u8> {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let n = r.u32()? as usize;
        if n > MAX_LEN {
            return Err(CodecError::Oversize(n, MAX_LEN));
        }
        Ok(r.take(n)?.to_vec())
    }
}

/// Count-prefixed list of encodable items.
pub fn encode_list<T: Encode>(items: &[T], out: &mut Vec<u8>) {
    (items.len() as u32).encode(out);
    for item in items {
        item.encode(out);
    }
}

pub fn decode_list<T: Decode>(r: &mut Reader<'_>) -> Result<Vec<T>, CodecError> {
    let n = r.u32()? as usize;
    if n > MAX_LEN {
        return Err(CodecError::Oversize(n, MAX_LEN));
    }
    let mut items = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        items.push(T::decode(r)?);
    }
    Ok(items)
}

pub fn encode_option<T: Encode>(v: &Option<T>, out: &mut Vec<u8>) {
    match v {
        None => out.push(0),
        Some(x) => {
            out.push(1);
            x.encode(out);
        }
    }
}

pub fn decode_option<T: Decode>(r: &mut Reader<'_>) -> Result<Option<T>, CodecError> {
    match r.u8()? {
        0 => Ok(None),
        1 => Ok(Some(T::decode(r)?)),
        tag => Err(CodecError::Tag { what: "option", tag }),
    }
}

impl Encode for MinerId {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
    }
}

impl Decode for MinerId {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(MinerId(r.u64()?))
    }
}

impl Encode for SectorId {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
    }
}

impl Decode for SectorId {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(SectorId(r.u64()?))
    }
}

impl Encode for FileId {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
    }
}

impl Decode for FileId {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(FileId(Hash256::decode(r)?))
    }
}

impl Encode for ChunkIndex {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
    }
}

impl Decode for ChunkIndex {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(ChunkIndex(r.u16()?))
    }
}
