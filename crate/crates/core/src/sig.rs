//! Identity keys for votes and transaction submission.
//!
//! Same construction as the threshold-signature shares: deterministic hash
//! tags bound to (key, domain, digest). Binding and deterministic, which
//! is what consensus and ledger validation need in the simulator; not
//! hardened against attackers outside it.

use crate::codec::{CodecError, Decode, Encode, Reader};
use crate::hash::{domain, sha256_parts, Hash256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub Hash256);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub Hash256);

/// Signing capability for one identity. The key tag is derived one-way
/// from the seed; handing out a `SecretKey` is what authorizes signing in
/// the simulation.
#[derive(Debug, Clone)]
pub struct SecretKey {
    public: PublicKey,
}

impl SecretKey {
    pub fn from_seed(seed: Hash256) -> SecretKey {
        let public = PublicKey(sha256_parts(&[&[domain::SIG_PK], seed.as_bytes()]));
        SecretKey { public }
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn sign(&self, tag: u8, digest: &Hash256) -> Signature {
        Signature(sha256_parts(&[
            &[domain::SIG_TAG],
            self.public.0.as_bytes(),
            &[tag],
            digest.as_bytes(),
        ]))
    }
}

pub fn verify(pk: &PublicKey, tag: u8, digest: &Hash256, sig: &Signature) -> bool {
    sig.0
        == sha256_parts(&[
            &[domain::SIG_TAG],
            pk.0.as_bytes(),
            &[tag],
            digest.as_bytes(),
        ])
}

impl Encode for PublicKey {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
    }
}

impl Decode for PublicKey {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(PublicKey(Hash256::decode(r)?))
    }
}

impl Encode for Signature {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
    }
}

impl Decode for Signature {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Signature(Hash256::decode(r)?))
    }
}
