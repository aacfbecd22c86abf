//! The storage protocol: put/get flows, miner roles, and the erasure
//! coding parameter rule.
//!
//! For a network of n sectors tolerating f = floor((n-1)/3) Byzantine
//! sectors, files are split into K = n - f data chunks and encoded into
//! n = K + M chunks with M = f parity chunks, one chunk per sector. K
//! must exceed f (otherwise a coalition holding f chunks could regenerate
//! the rest on demand and fake storage), and K at most n - f keeps the
//! file recoverable from honest sectors alone; K = n - f is the cheapest
//! choice in that interval.

pub mod client;
pub mod messages;
pub mod miner;

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::fingerprint::FingerprintParams;
use crate::hash::domain;
use crate::ledger::{compute_f, ChainConfig};
use crate::sim::{Ctx, NodeId, SimNode};
use crate::types::{FileId, MinerId};
use crate::wts::{AggregationKey, PublicParams, VerificationKey};

pub use client::{ClientNode, ClientTimer, GetRecord, PutRecord, WorkItem};
pub use miner::{CommitRecord, MinerNode, MinerTimer};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("network needs at least 4 sectors to tolerate a fault, got {0}")]
    TooFewSectors(u64),
    #[error("file is empty")]
    EmptyFile,
}

/// Erasure-coding parameters for a network of `n` sectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolParams {
    pub n: u64,
    pub f: u64,
    pub k: u64,
    pub m: u64,
}

pub fn choose_params(n: u64) -> Result<ProtocolParams, ProtocolError> {
    if n < 4 {
        return Err(ProtocolError::TooFewSectors(n));
    }
    let f = compute_f(n);
    let k = n - f;
    assert!(k > f, "generation-attack bound violated: K must exceed f");
    Ok(ProtocolParams { n, f, k, m: f })
}

/// Pad with zeros to a multiple of K * 8 bytes so every chunk is a whole
/// number of 8-byte fingerprint blocks; the true length travels in the
/// manifest.
pub fn pad_file(data: &[u8], k: u64) -> Vec<u8> {
    let unit = k * 8;
    let padded_len = (data.len() as u64).div_ceil(unit).max(1) * unit;
    let mut out = data.to_vec();
    out.resize(padded_len as usize, 0);
    out
}

/// Split a padded file into K equal contiguous rows.
pub fn split_file(padded: &[u8], k: u64) -> Vec<Vec<u8>> {
    let chunk = padded.len() / k as usize;
    padded.chunks_exact(chunk).map(|c| c.to_vec()).collect()
}

/// Inverse of pad+split: concatenate data rows and cut at the true length.
pub fn concat_and_strip(rows: &[Vec<u8>], true_len: u64) -> Vec<u8> {
    let mut out: Vec<u8> = rows.iter().flatten().copied().collect();
    out.truncate(true_len as usize);
    out
}

/// The byte string certified by the threshold signature for one chunk:
/// domain tag, file id, chunk index, fingerprint. Binding the context in
/// prevents replaying a signature across files or positions.
pub fn chunk_message(file_id: &FileId, index: u16, fp: &[u8; 8]) -> Vec<u8> {
    let mut msg = Vec::with_capacity(1 + 32 + 2 + 8);
    msg.push(domain::CHUNK_MSG);
    msg.extend_from_slice(file_id.0.as_bytes());
    msg.extend_from_slice(&index.to_be_bytes());
    msg.extend_from_slice(fp);
    msg
}

/// Immutable network-wide configuration shared by every node.
#[derive(Debug, Clone)]
pub struct NetParams {
    pub chain: ChainConfig,
    pub fp: FingerprintParams,
    pub wts_pp: PublicParams,
    pub wts_vk: VerificationKey,
    pub wts_ak: AggregationKey,
    pub delta_ms: u64,
    pub bytes_per_ms: u64,
    pub block_interval_ms: u64,
    pub max_block_txs: usize,
    /// Re-derive threshold-signature weights from the ledger table every
    /// this many heights; 0 keeps genesis weights for the whole run.
    pub wts_refresh_every: u64,
    pub node_of: BTreeMap<MinerId, NodeId>,
    pub miner_nodes: Vec<NodeId>,
    pub client_nodes: Vec<NodeId>,
}

impl NetParams {
    pub fn node_of(&self, miner: MinerId) -> NodeId {
        self.node_of[&miner]
    }

    fn transfer_ms(&self, bytes: u64) -> u64 {
        bytes.div_ceil(self.bytes_per_ms.max(1))
    }

    /// Retrieval try timeout: two delta round trips plus one bandwidth
    /// window per delta's worth of payload.
    pub fn get_timeout_ms(&self, file_bytes: u64) -> u64 {
        let window = self.bytes_per_ms.max(1) * self.delta_ms.max(1);
        2 * self.delta_ms * (1 + file_bytes.div_ceil(window))
    }

    /// Put attempt deadline: a few block intervals for the store
    /// transaction to commit plus transfer budget for file and chunks.
    pub fn put_deadline_ms(&self, file_bytes: u64) -> u64 {
        6 * self.block_interval_ms + 8 * self.delta_ms + 4 * self.transfer_ms(file_bytes)
    }
}

/// Everything a simulation node can be.
pub enum Node {
    Miner(Box<MinerNode>),
    Client(Box<ClientNode>),
}

#[derive(Debug, Clone)]
pub enum NodeTimer {
    Miner(MinerTimer),
    Client(ClientTimer),
}

impl SimNode for Node {
    type Timer = NodeTimer;

    fn on_start(&mut self, ctx: &mut Ctx<NodeTimer>) {
        match self {
            Node::Miner(m) => m.on_start(ctx),
            Node::Client(c) => c.on_start(ctx),
        }
    }

    fn on_message(&mut self, ctx: &mut Ctx<NodeTimer>, from: NodeId, payload: Vec<u8>) {
        match self {
            Node::Miner(m) => m.on_message(ctx, from, payload),
            Node::Client(c) => c.on_message(ctx, from, payload),
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<NodeTimer>, timer: NodeTimer) {
        match (self, timer) {
            (Node::Miner(m), NodeTimer::Miner(t)) => m.on_timer(ctx, t),
            (Node::Client(c), NodeTimer::Client(t)) => c.on_timer(ctx, t),
            _ => {}
        }
    }

    fn is_honest(&self) -> bool {
        match self {
            Node::Miner(m) => m.is_honest(),
            Node::Client(_) => true,
        }
    }
}

impl Node {
    pub fn as_miner(&self) -> Option<&MinerNode> {
        match self {
            Node::Miner(m) => Some(m),
            Node::Client(_) => None,
        }
    }

    pub fn as_client(&self) -> Option<&ClientNode> {
        match self {
            Node::Client(c) => Some(c),
            Node::Miner(_) => None,
        }
    }
}

/// Shared configuration handle.
pub type Net = Arc<NetParams>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_examples() {
        let p = choose_params(4).unwrap();
        assert_eq!((p.k, p.m), (3, 1));
        let p = choose_params(10).unwrap();
        assert_eq!((p.k, p.m), (7, 3));
        let p = choose_params(40).unwrap();
        assert_eq!((p.k, p.m), (27, 13));
        assert_eq!(choose_params(3), Err(ProtocolError::TooFewSectors(3)));
    }

    #[test]
    fn padding_six_bytes_n4() {
        // n=4 -> K=3: six bytes pad to one 24-byte unit, three 8-byte
        // chunks; the first carries the data plus two zero bytes.
        let data = [1u8, 2, 3, 4, 5, 6];
        let padded = pad_file(&data, 3);
        assert_eq!(padded.len(), 24);
        let rows = split_file(&padded, 3);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0], vec![1, 2, 3, 4, 5, 6, 0, 0]);
        assert!(rows[1].iter().all(|&b| b == 0));
        assert_eq!(concat_and_strip(&rows, 6), data);
    }

    #[test]
    fn padding_rule_roundtrip_oracle() {
        // oracle: padded length is the least multiple of 8K covering the
        // data (at least one unit), recovery cuts back to the true length
        for k in [3u64, 7, 27] {
            for len in [1usize, 7, 8, 23, 24, 25, 1000] {
                let data: Vec<u8> = (0..len).map(|i| i as u8).collect();
                let padded = pad_file(&data, k);
                let unit = (k * 8) as usize;
                assert_eq!(padded.len() % unit, 0);
                assert!(padded.len() >= len && padded.len() - len < unit);
                let rows = split_file(&padded, k);
                assert_eq!(rows.len(), k as usize);
                assert_eq!(concat_and_strip(&rows, len as u64), data);
            }
        }
    }

    #[test]
    fn chunk_message_binds_context() {
        let f1 = FileId(crate::hash::sha256(b"f1"));
        let f2 = FileId(crate::hash::sha256(b"f2"));
        let fp = [1u8; 8];
        assert_ne!(chunk_message(&f1, 1, &fp), chunk_message(&f2, 1, &fp));
        assert_ne!(chunk_message(&f1, 1, &fp), chunk_message(&f1, 2, &fp));
        assert_ne!(chunk_message(&f1, 1, &fp), chunk_message(&f1, 1, &[2u8; 8]));
    }
}
