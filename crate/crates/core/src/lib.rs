//! Byzantine fault tolerant decentralized storage over erasure-coded sectors.
//!
//! The library has three layers:
//!
//! * **Primitives** — [`galois`] (GF(2^8) arithmetic and systematic
//!   Reed-Solomon coding), [`fingerprint`] (homomorphic fingerprints that
//!   commute with encoding), [`wts`] (weighted threshold signatures) and
//!   [`pos`] (Merkle-tree proofs of storage).
//! * **Replicated state** — [`ledger`] (transactions, blocks, the
//!   height-indexed weight table) and [`consensus`] (storage-weighted
//!   Tendermint-style BFT).
//! * **Simulation** — [`sim`] (deterministic discrete-event network),
//!   [`protocol`] (put/get flows and miner roles), [`adversary`]
//!   (Byzantine strategy injection) and [`harness`] (scenario runner and
//!   metrics emission).
//!
//! Everything is deterministic for a fixed seed: the same scenario always
//! produces the same event trace, ledger state and metrics.

pub mod adversary;
pub mod codec;
pub mod consensus;
pub mod fingerprint;
pub mod galois;
pub mod harness;
pub mod hash;
pub mod ledger;
pub mod pos;
pub mod protocol;
pub mod sig;
pub mod sim;
pub mod types;
pub mod wts;

pub use hash::Hash256;
pub use types::{ChunkIndex, FileId, MinerId, SectorId};
