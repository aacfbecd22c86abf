//! On-disk persistence: an append-only block log and state snapshots.
//!
//! Block log: magic `SNBL`, format version u32, then a sequence of
//! u32-length-prefixed serialized [`CommittedBlock`]s.
//! Snapshot: magic `SNSS`, format version u32, then one serialized
//! [`LedgerState`]. Both formats are byte-stable across runs.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::codec::{CodecError, Decode, Encode};

use super::{CommittedBlock, LedgerState};

const LOG_MAGIC: &[u8; 4] = b"SNBL";
const SNAP_MAGIC: &[u8; 4] = b"SNSS";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("decode: {0}")]
    Codec(#[from] CodecError),
    #[error("bad magic or version")]
    Format,
}

/// Append-only writer for committed blocks.
pub struct BlockLogWriter {
    out: BufWriter<File>,
}

impl BlockLogWriter {
    pub fn create(path: &Path) -> Result<BlockLogWriter, PersistError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)?;
        let mut out = BufWriter::new(file);
        out.write_all(LOG_MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_be_bytes())?;
        Ok(BlockLogWriter { out })
    }

    pub fn append(&mut self, block: &CommittedBlock) -> Result<(), PersistError> {
        let bytes = block.encode_to_vec();
        self.out.write_all(&(bytes.len() as u32).to_be_bytes())?;
        self.out.write_all(&bytes)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), PersistError> {
        self.out.flush()?;
        Ok(())
    }
}

/// Read a whole block log back in order.
pub fn read_block_log(path: &Path) -> Result<Vec<CommittedBlock>, PersistError> {
    let mut input = BufReader::new(File::open(path)?);
    let mut header = [0u8; 8];
    input.read_exact(&mut header)?;
    if &header[..4] != LOG_MAGIC
        || u32::from_be_bytes(header[4..].try_into().unwrap()) != FORMAT_VERSION
    {
        return Err(PersistError::Format);
    }
    let mut blocks = Vec::new();
    let mut len_buf = [0u8; 4];
    loop {
        match input.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_be_bytes(len_buf) as usize;
        let mut buf = vec![0u8; len];
        input.read_exact(&mut buf)?;
        blocks.push(CommittedBlock::decode_all(&buf)?);
    }
    Ok(blocks)
}

pub fn write_snapshot(path: &Path, state: &LedgerState) -> Result<(), PersistError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(SNAP_MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_be_bytes())?;
    out.write_all(&state.encode_to_vec())?;
    out.flush()?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<LedgerState, PersistError> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 8
        || &buf[..4] != SNAP_MAGIC
        || u32::from_be_bytes(buf[4..8].try_into().unwrap()) != FORMAT_VERSION
    {
        return Err(PersistError::Format);
    }
    Ok(LedgerState::decode_all(&buf[8..])?)
}

/// Rebuild state by replaying a block log from genesis.
pub fn replay(
    config: super::ChainConfig,
    blocks: &[CommittedBlock],
) -> Result<LedgerState, super::BlockError> {
    let mut iter = blocks.iter();
    let genesis = iter.next().expect("log contains at least the genesis block");
    let mut state = LedgerState::genesis(config, &genesis.block)?;
    for b in iter {
        state.apply_block(b)?;
    }
    Ok(state)
}
