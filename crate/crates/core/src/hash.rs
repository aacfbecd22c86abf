//! The network-wide 256-bit hash and its domain separation tags.
//!
//! One fixed hash (SHA-256) is used for file ids, Merkle nodes, block
//! hashes, challenge derivation and signatures. Distinct domains get
//! distinct single-byte prefixes so a digest from one context can never be
//! replayed in another.

use std::fmt;

use sha2::{Digest, Sha256};

/// Domain tags. Every hashed structure except the file id (whose format is
/// pinned to the raw fingerprint concatenation) is prefixed with one of
/// these.
pub mod domain {
    pub const MERKLE_LEAF: u8 = 0x00;
    pub const MERKLE_NODE: u8 = 0x01;
    pub const POS_DIGEST: u8 = 0x02;
    pub const BLOCK: u8 = 0x03;
    pub const TX: u8 = 0x04;
    pub const VOTE: u8 = 0x06;
    pub const PROPOSAL: u8 = 0x07;
    pub const CHUNK_MSG: u8 = 0x08;
    pub const STATE: u8 = 0x09;
    pub const SIG_PK: u8 = 0x10;
    pub const SIG_TAG: u8 = 0x11;
    pub const WTS_PARAMS: u8 = 0x12;
    pub const WTS_SK: u8 = 0x13;
    pub const SEED: u8 = 0x14;
}

/// A 32-byte digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash256(pub [u8; 32]);

impl Hash256 {
    pub const ZERO: Hash256 = Hash256([0; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// First eight bytes interpreted as a big-endian integer; used for
    /// challenge-index derivation.
    pub fn prefix_u64(&self) -> u64 {
        u64::from_be_bytes(self.0[..8].try_into().unwrap())
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Hash a single byte slice.
pub fn sha256(data: &[u8]) -> Hash256 {
    let mut h = Sha256::new();
    h.update(data);
    Hash256(h.finalize().into())
}

/// Hash the concatenation of several slices without materializing it.
pub fn sha256_parts(parts: &[&[u8]]) -> Hash256 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Hash256(h.finalize().into())
}

/// Derive an independent 32-byte seed from a root seed and a label.
pub fn derive_seed(root: u64, label: &str, salt: u64) -> [u8; 32] {
    sha256_parts(&[
        &[domain::SEED],
        &root.to_be_bytes(),
        label.as_bytes(),
        &salt.to_be_bytes(),
    ])
    .0
}

impl fmt::Debug for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash256({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &self.to_hex()[..16])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_matches_known_vector() {
        // SHA-256("abc")
        let h = sha256(b"abc");
        assert_eq!(
            h.to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn parts_equal_concatenation() {
        let a = sha256_parts(&[b"ab", b"c"]);
        let b = sha256(b"abc");
        assert_eq!(a, b);
    }

    #[test]
    fn prefix_u64_is_big_endian() {
        let mut bytes = [0u8; 32];
        bytes[7] = 1;
        assert_eq!(Hash256(bytes).prefix_u64(), 1);
        bytes[0] = 1;
        assert_eq!(Hash256(bytes).prefix_u64(), (1 << 56) | 1);
    }
}
