//! Weighted threshold signatures over chunk fingerprints.
//!
//! The scheme is a weighted multi-signature: each miner signs with its own
//! deterministic key, an aggregate is the list of distinct-signer partials,
//! and verification succeeds when every partial is valid over the message
//! and the signers' weights sum to at least the threshold. Weights come
//! from the pledged-sector table at key-generation height.
//!
//! Signatures are deterministic hash tags bound to (signer key, message).
//! They are simulation-grade: binding and deterministic, which is what the
//! protocol logic and the adversary suite exercise, but not hardened
//! against an attacker outside the simulation.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::codec::{decode_list, encode_list, CodecError, Decode, Encode, Reader};
use crate::hash::{domain, sha256_parts, Hash256};
use crate::types::MinerId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WtsError {
    #[error("unsupported security level {0} (expected 128 or 256)")]
    SecurityLevel(u32),
    #[error("weight vector length {got} does not match miner count {expected}")]
    WeightCount { expected: usize, got: usize },
    #[error("keygen needs at least one miner")]
    NoMiners,
    #[error("weights must be positive (miner {0})")]
    ZeroWeight(MinerId),
    #[error("partial signature from unknown signer {0}")]
    UnknownSigner(MinerId),
    #[error("invalid partial signature from {0}")]
    InvalidPartial(MinerId),
}

/// Public parameters fixed by `setup`; deterministic for a given seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicParams {
    pub security_bits: u32,
    pub domain: Hash256,
}

/// Per-miner signing capability; the public tag key is derived one-way
/// from the keygen secret.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SigningKey {
    pub miner: MinerId,
    public: Hash256,
}

impl SigningKey {
    pub fn public(&self) -> Hash256 {
        self.public
    }
}

/// Global verification key: every signer's public tag key plus its weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationKey {
    pub entries: BTreeMap<MinerId, (Hash256, u64)>,
}

impl VerificationKey {
    pub fn weight_of(&self, miner: MinerId) -> u64 {
        self.entries.get(&miner).map(|(_, w)| *w).unwrap_or(0)
    }

    pub fn total_weight(&self) -> u64 {
        self.entries.values().map(|(_, w)| w).sum()
    }

    /// Re-issue with weights drawn from a newer table; public keys are
    /// stable so existing partials stay valid.
    pub fn with_weights(&self, weights: &BTreeMap<MinerId, u64>) -> VerificationKey {
        let entries = self
            .entries
            .iter()
            .map(|(m, (pk, w))| (*m, (*pk, weights.get(m).copied().unwrap_or(*w))))
            .collect();
        VerificationKey { entries }
    }
}

/// Public aggregation key. For a multi-signature this carries the same
/// registry as the verification key; aggregation uses it to validate and
/// attribute partials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregationKey {
    pub entries: BTreeMap<MinerId, (Hash256, u64)>,
}

/// Full output of key generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WtsKeys {
    pub vk: VerificationKey,
    pub ak: AggregationKey,
    pub signing_keys: BTreeMap<MinerId, SigningKey>,
}

/// A single miner's signature share over a message digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialSignature {
    pub signer: MinerId,
    pub message_digest: Hash256,
    pub tag: Hash256,
}

/// Distinct-signer list of partials; effective weight is the sum of the
/// signers' registered weights.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AggregateSignature {
    pub parts: Vec<PartialSignature>,
}

pub fn wts_setup(security_bits: u32, seed: u64) -> Result<PublicParams, WtsError> {
    if security_bits != 128 && security_bits != 256 {
        return Err(WtsError::SecurityLevel(security_bits));
    }
    let domain = sha256_parts(&[
        &[domain::WTS_PARAMS],
        &security_bits.to_be_bytes(),
        &seed.to_be_bytes(),
    ]);
    Ok(PublicParams {
        security_bits,
        domain,
    })
}

/// Deterministically derive the key set for `nn` miners with the given
/// weights. Every node running keygen with the same inputs obtains the
/// same keys, which stands in for a trusted dealer at genesis.
pub fn wts_keygen(
    pp: &PublicParams,
    nn: usize,
    miners_with_weights: &[(MinerId, u64)],
) -> Result<WtsKeys, WtsError> {
    if nn == 0 {
        return Err(WtsError::NoMiners);
    }
    if miners_with_weights.len() != nn {
        return Err(WtsError::WeightCount {
            expected: nn,
            got: miners_with_weights.len(),
        });
    }
    let mut signing_keys = BTreeMap::new();
    let mut entries = BTreeMap::new();
    for &(miner, weight) in miners_with_weights {
        if weight == 0 {
            return Err(WtsError::ZeroWeight(miner));
        }
        let secret = sha256_parts(&[
            &[domain::WTS_SK],
            pp.domain.as_bytes(),
            &miner.0.to_be_bytes(),
        ]);
        let public = sha256_parts(&[&[domain::SIG_PK], secret.as_bytes()]);
        signing_keys.insert(miner, SigningKey { miner, public });
        entries.insert(miner, (public, weight));
    }
    Ok(WtsKeys {
        vk: VerificationKey {
            entries: entries.clone(),
        },
        ak: AggregationKey { entries },
        signing_keys,
    })
}

fn message_digest(message: &[u8]) -> Hash256 {
    sha256_parts(&[&[domain::CHUNK_MSG], message])
}

fn tag_for(public: &Hash256, digest: &Hash256) -> Hash256 {
    sha256_parts(&[&[domain::SIG_TAG], public.as_bytes(), digest.as_bytes()])
}

/// Produce a deterministic partial signature over `message`.
pub fn wts_psign(message: &[u8], sk: &SigningKey) -> PartialSignature {
    let digest = message_digest(message);
    PartialSignature {
        signer: sk.miner,
        message_digest: digest,
        tag: tag_for(&sk.public, &digest),
    }
}

/// Check one partial against the public registry.
pub fn partial_valid(
    partial: &PartialSignature,
    message: &[u8],
    entries: &BTreeMap<MinerId, (Hash256, u64)>,
) -> bool {
    let Some((public, _)) = entries.get(&partial.signer) else {
        return false;
    };
    let digest = message_digest(message);
    partial.message_digest == digest && partial.tag == tag_for(public, &digest)
}

/// Combine partials over one message. Invalid partials are rejected with
/// the offending signer's id so the caller can report the fault; duplicate
/// signers are collapsed to a single share.
pub fn wts_aggregate(
    partials: &[PartialSignature],
    ak: &AggregationKey,
    message: &[u8],
) -> Result<AggregateSignature, WtsError> {
    let mut by_signer: BTreeMap<MinerId, PartialSignature> = BTreeMap::new();
    for p in partials {
        if !ak.entries.contains_key(&p.signer) {
            return Err(WtsError::UnknownSigner(p.signer));
        }
        if !partial_valid(p, message, &ak.entries) {
            return Err(WtsError::InvalidPartial(p.signer));
        }
        by_signer.entry(p.signer).or_insert_with(|| p.clone());
    }
    Ok(AggregateSignature {
        parts: by_signer.into_values().collect(),
    })
}

/// Effective weight of an aggregate under a verification key: the sum of
/// distinct valid signers' weights, ignoring anything invalid.
pub fn effective_weight(
    sig: &AggregateSignature,
    message: &[u8],
    vk: &VerificationKey,
) -> Option<u64> {
    let mut seen = BTreeMap::new();
    for p in &sig.parts {
        if !partial_valid(p, message, &vk.entries) {
            return None;
        }
        seen.insert(p.signer, vk.weight_of(p.signer));
    }
    Some(seen.values().sum())
}

/// True iff every member partial is valid over `message` and the distinct
/// signers' weights sum to at least `t`.
pub fn wts_verify(message: &[u8], sig: &AggregateSignature, vk: &VerificationKey, t: u64) -> bool {
    match effective_weight(sig, message, vk) {
        Some(w) => w >= t,
        None => false,
    }
}

impl Encode for PartialSignature {
    fn encode(&self, out: &mut Vec<u8>) {
        self.signer.encode(out);
        self.message_digest.encode(out);
        self.tag.encode(out);
    }
}

impl Decode for PartialSignature {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(PartialSignature {
            signer: MinerId::decode(r)?,
            message_digest: Hash256::decode(r)?,
            tag: Hash256::decode(r)?,
        })
    }
}

impl Encode for AggregateSignature {
    fn encode(&self, out: &mut Vec<u8>) {
        encode_list(&self.parts, out);
    }
}

impl Decode for AggregateSignature {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(AggregateSignature {
            parts: decode_list(r)?,
        })
    }
}
