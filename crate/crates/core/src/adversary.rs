//! Pluggable Byzantine strategies.
//!
//! A corrupted miner keeps the honest code paths but intercepts them at
//! fixed hook points: serving chunks, encoding, answering retrievals,
//! pledging, voting, and raw message emission. Strategies are seeded and
//! deterministic: the same scenario seed yields the same misbehavior
//! schedule.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use std::collections::BTreeSet;

use crate::hash::sha256_parts;
use crate::ledger::SignedVote;
use crate::sig::SecretKey;
use crate::types::{ChunkIndex, FileId};

/// The strategy library. "Arbitrary" Byzantine behavior is approximated
/// by these plus the seeded fuzz mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Honest,
    /// Flip bytes in chunks before serving retrievals.
    TamperChunk,
    /// Ignore retrieval requests entirely.
    DropChunk,
    /// Emit wrong parity chunks when acting as the encoding miner.
    BadEncoder,
    /// As retrieval miner, stall or return garbage files.
    BadRetrieval,
    /// Claim sectors without storing anything; pledges carry bogus
    /// openings and must never enter the weight table.
    SybilPledge,
    /// Ack chunks, discard the data, and try to regenerate on demand;
    /// doomed because the coalition holds at most f < K chunks.
    GenerationAttack,
    /// Double-vote in consensus.
    Equivocate,
    /// Tamper + drop + equivocate, mixed by seed.
    Combined,
    /// Seeded random mutation of outgoing messages.
    Fuzz,
}

impl Strategy {
    pub fn parse(s: &str) -> Option<Strategy> {
        Some(match s {
            "honest" => Strategy::Honest,
            "tamper-chunk" => Strategy::TamperChunk,
            "drop-chunk" => Strategy::DropChunk,
            "bad-encoder" => Strategy::BadEncoder,
            "bad-retrieval" => Strategy::BadRetrieval,
            "sybil-pledge" => Strategy::SybilPledge,
            "generation-attack" => Strategy::GenerationAttack,
            "equivocate" => Strategy::Equivocate,
            "combined" => Strategy::Combined,
            "fuzz" => Strategy::Fuzz,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Honest => "honest",
            Strategy::TamperChunk => "tamper-chunk",
            Strategy::DropChunk => "drop-chunk",
            Strategy::BadEncoder => "bad-encoder",
            Strategy::BadRetrieval => "bad-retrieval",
            Strategy::SybilPledge => "sybil-pledge",
            Strategy::GenerationAttack => "generation-attack",
            Strategy::Equivocate => "equivocate",
            Strategy::Combined => "combined",
            Strategy::Fuzz => "fuzz",
        }
    }

    /// Every non-honest strategy, for sweep drivers.
    pub fn all_byzantine() -> &'static [Strategy] {
        &[
            Strategy::TamperChunk,
            Strategy::DropChunk,
            Strategy::BadEncoder,
            Strategy::BadRetrieval,
            Strategy::SybilPledge,
            Strategy::GenerationAttack,
            Strategy::Equivocate,
            Strategy::Combined,
        ]
    }
}

/// Scenario-level adversary settings.
#[derive(Debug, Clone, Copy)]
pub struct AdversaryConfig {
    /// Fraction of total sectors handed to the adversary.
    pub fraction: f64,
    pub strategy: Strategy,
    pub seed: u64,
}

/// What to do with a chunk about to be served.
pub enum ServeAction {
    Serve(Vec<u8>),
    Drop,
}

/// How a corrupted retrieval miner treats a request.
pub enum RetrievalAction {
    Honest,
    Stall,
    Garbage,
}

/// Per-miner adversary state, attached to corrupted miners only.
#[derive(Debug)]
pub struct AdversaryState {
    pub strategy: Strategy,
    rng: ChaCha12Rng,
    /// Chunks acked then thrown away (generation attack).
    pub discarded: BTreeSet<(FileId, ChunkIndex)>,
}

/// Instrument a corrupted miner with a strategy. Determinism: the state
/// is seeded from (scenario seed, miner id).
pub fn apply_strategy(strategy: Strategy, seed: u64, miner_salt: u64) -> AdversaryState {
    let digest = sha256_parts(&[
        b"adversary",
        &seed.to_be_bytes(),
        &miner_salt.to_be_bytes(),
    ]);
    AdversaryState {
        strategy,
        rng: ChaCha12Rng::from_seed(digest.0),
        discarded: BTreeSet::new(),
    }
}

impl AdversaryState {
    /// Hook: a retrieval asks for a chunk this miner stores.
    pub fn serve_chunk(
        &mut self,
        file: FileId,
        index: ChunkIndex,
        payload: Vec<u8>,
    ) -> ServeAction {
        match self.strategy {
            Strategy::TamperChunk => ServeAction::Serve(self.tamper(payload)),
            Strategy::DropChunk => ServeAction::Drop,
            Strategy::GenerationAttack => {
                if self.discarded.contains(&(file, index)) {
                    // regeneration needs K chunks; the coalition holds at
                    // most f < K, so the "regenerated" bytes are junk
                    ServeAction::Serve(vec![0u8; payload.len()])
                } else {
                    ServeAction::Serve(payload)
                }
            }
            Strategy::Combined => {
                if self.rng.gen_bool(0.5) {
                    ServeAction::Serve(self.tamper(payload))
                } else {
                    ServeAction::Drop
                }
            }
            Strategy::Fuzz => {
                if self.rng.gen_bool(0.3) {
                    ServeAction::Drop
                } else {
                    ServeAction::Serve(self.tamper(payload))
                }
            }
            _ => ServeAction::Serve(payload),
        }
    }

    fn tamper(&mut self, mut payload: Vec<u8>) -> Vec<u8> {
        if payload.is_empty() {
            return payload;
        }
        let flips = 1 + (self.rng.next_u32() as usize % 4);
        for _ in 0..flips {
            let at = self.rng.gen_range(0..payload.len());
            payload[at] ^= 1 << self.rng.gen_range(0..8);
        }
        payload
    }

    /// Hook: should a freshly stored chunk be thrown away?
    pub fn discard_after_store(&mut self, file: FileId, index: ChunkIndex) -> bool {
        if self.strategy == Strategy::GenerationAttack {
            self.discarded.insert((file, index));
            true
        } else {
            false
        }
    }

    /// Hook: corrupt encoded chunks before distribution. Returns true if
    /// anything was altered.
    pub fn corrupt_encoding(&mut self, chunks: &mut [Vec<u8>], k: usize) -> bool {
        if self.strategy != Strategy::BadEncoder {
            return false;
        }
        // wrong parity: data chunks stay intact, parity is garbage
        for payload in chunks.iter_mut().skip(k) {
            let fresh = self.tamper(std::mem::take(payload));
            *payload = fresh;
        }
        true
    }

    /// Hook: behavior when selected as retrieval miner.
    pub fn retrieval_behavior(&mut self) -> RetrievalAction {
        match self.strategy {
            Strategy::BadRetrieval => {
                if self.rng.gen_bool(0.5) {
                    RetrievalAction::Stall
                } else {
                    RetrievalAction::Garbage
                }
            }
            Strategy::Combined | Strategy::Fuzz => RetrievalAction::Stall,
            _ => RetrievalAction::Honest,
        }
    }

    /// Hook: replace an outgoing vote broadcast with equivocating pairs.
    /// Returns the honest vote plus a conflicting forgery; `None` keeps
    /// the single honest broadcast.
    pub fn equivocate_vote(
        &mut self,
        honest: &SignedVote,
        sk: &SecretKey,
    ) -> Option<(SignedVote, SignedVote)> {
        if !matches!(self.strategy, Strategy::Equivocate | Strategy::Combined) {
            return None;
        }
        let target = honest.vote.block_hash?;
        let mut conflicting = honest.vote.clone();
        conflicting.block_hash = Some(sha256_parts(&[target.as_bytes(), b"equivocation"]));
        let forged = SignedVote::sign(conflicting, sk);
        Some((honest.clone(), forged))
    }

    /// On even rounds the pair is split across peer halves (hardest case
    /// for safety); on odd rounds both votes go everywhere (detectable,
    /// exercising the evidence path).
    pub fn split_delivery(&self, round: u32) -> bool {
        round % 2 == 0
    }

    /// Hook: mutate or drop an arbitrary outgoing message (fuzz mode).
    /// Returns false to drop.
    pub fn fuzz_outgoing(&mut self, payload: &mut Vec<u8>) -> bool {
        if self.strategy != Strategy::Fuzz {
            return true;
        }
        match self.rng.gen_range(0u32..10) {
            0 => false, // drop
            1 | 2 => {
                if !payload.is_empty() {
                    let at = self.rng.gen_range(0..payload.len());
                    payload[at] ^= 0xFF;
                }
                true
            }
            _ => true,
        }
    }
}
