//! Homomorphic fingerprints that commute with Reed-Solomon encoding.
//!
//! A chunk is read as a polynomial over GF(2^64) (one coefficient per
//! 8-byte block) and evaluated at a fixed public point. GF(2^64) is built
//! as a degree-8 extension of the coding field GF(2^8), reduced by
//! x^8 + x^3 + x + 0x09 (irreducible and primitive over GF(2^8)/0x11D).
//! In this tower, multiplying a fingerprint by a GF(2^8) scalar is plain
//! byte-wise scaling, so applying the generator matrix to fingerprints
//! yields exactly the fingerprints of the encoded chunks:
//!
//! fingerprints(encode(data)) = encode(fingerprints(data))
//!
//! with bit-for-bit equality, not just with high probability.

use thiserror::Error;

use crate::galois::{mul_no_table, GeneratorMatrix, Gf256};
use crate::hash::{sha256_parts, Hash256};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FingerprintError {
    #[error("chunk length {0} is not a multiple of 8 bytes")]
    UnpaddedChunk(usize),
    #[error("expected {expected} fingerprints, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("fingerprints were computed at different evaluation points")]
    MixedPoints,
}

/// Coefficients of the reduction rule x^8 = x^3 + x + 0x09.
const RED_C0: u8 = 0x09;
const RED_C1: u8 = 0x01;
const RED_C3: u8 = 0x01;

/// x^(8+j) mod f for j in 0..7, as coefficient arrays.
const fn reduction_rows() -> [[u8; 8]; 7] {
    let mut rows = [[0u8; 8]; 7];
    rows[0] = [RED_C0, RED_C1, 0, RED_C3, 0, 0, 0, 0];
    let mut j = 1;
    while j < 7 {
        // rows[j] = x * rows[j-1] mod f
        let prev = rows[j - 1];
        let carry = prev[7];
        let mut row = [0u8; 8];
        let mut i = 7;
        while i > 0 {
            row[i] = prev[i - 1];
            i -= 1;
        }
        if carry != 0 {
            row[0] ^= mul_no_table(carry, RED_C0);
            row[1] ^= mul_no_table(carry, RED_C1);
            row[3] ^= mul_no_table(carry, RED_C3);
        }
        rows[j] = row;
        j += 1;
    }
    rows
}

static REDUCE: [[u8; 8]; 7] = reduction_rows();

/// An element of GF(2^64) = GF(2^8)[x]/(x^8 + x^3 + x + 0x09).
///
/// `coeffs[i]` holds the coefficient of x^i. The wire form is big-endian:
/// highest-degree coefficient first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Gf64 {
    coeffs: [u8; 8],
}

impl Gf64 {
    pub const ZERO: Gf64 = Gf64 { coeffs: [0; 8] };
    pub const ONE: Gf64 = Gf64 {
        coeffs: [1, 0, 0, 0, 0, 0, 0, 0],
    };

    pub fn from_be_bytes(bytes: [u8; 8]) -> Gf64 {
        let mut coeffs = [0u8; 8];
        for i in 0..8 {
            coeffs[i] = bytes[7 - i];
        }
        Gf64 { coeffs }
    }

    pub fn to_be_bytes(self) -> [u8; 8] {
        let mut bytes = [0u8; 8];
        for i in 0..8 {
            bytes[7 - i] = self.coeffs[i];
        }
        bytes
    }

    pub fn is_zero(self) -> bool {
        self.coeffs == [0; 8]
    }

    pub fn add(self, rhs: Gf64) -> Gf64 {
        let mut coeffs = self.coeffs;
        for i in 0..8 {
            coeffs[i] ^= rhs.coeffs[i];
        }
        Gf64 { coeffs }
    }

    /// Schoolbook polynomial product reduced by the field polynomial.
    pub fn mul(self, rhs: Gf64) -> Gf64 {
        let mut wide = [0u8; 15];
        for (i, &a) in self.coeffs.iter().enumerate() {
            if a == 0 {
                continue;
            }
            let ga = Gf256(a);
            for (j, &b) in rhs.coeffs.iter().enumerate() {
                if b != 0 {
                    wide[i + j] ^= ga.mul(Gf256(b)).0;
                }
            }
        }
        let mut coeffs = [0u8; 8];
        coeffs.copy_from_slice(&wide[..8]);
        for j in 0..7 {
            let c = wide[8 + j];
            if c != 0 {
                let gc = Gf256(c);
                for (slot, &r) in coeffs.iter_mut().zip(&REDUCE[j]) {
                    if r != 0 {
                        *slot ^= gc.mul(Gf256(r)).0;
                    }
                }
            }
        }
        Gf64 { coeffs }
    }

    /// Byte-wise action of a coding-field scalar; this is exactly
    /// multiplication by the constant polynomial `s` in the tower.
    pub fn scale(self, s: Gf256) -> Gf64 {
        let mut coeffs = [0u8; 8];
        for (out, &c) in coeffs.iter_mut().zip(&self.coeffs) {
            *out = s.mul(Gf256(c)).0;
        }
        Gf64 { coeffs }
    }

    pub fn pow(self, mut e: u64) -> Gf64 {
        let mut acc = Gf64::ONE;
        let mut base = self;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(base);
            }
            base = base.mul(base);
            e >>= 1;
        }
        acc
    }
}

/// Network-wide fingerprint parameters: one nonzero evaluation point,
/// fixed at genesis and identical at every miner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FingerprintParams {
    pub point: Gf64,
}

impl FingerprintParams {
    pub fn new(point: Gf64) -> FingerprintParams {
        assert!(!point.is_zero(), "evaluation point must be nonzero");
        FingerprintParams { point }
    }

    /// Derive the evaluation point from the genesis hash.
    pub fn from_genesis(genesis: &Hash256) -> FingerprintParams {
        let digest = sha256_parts(&[genesis.as_bytes(), b"fingerprint-point"]);
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest.0[..8]);
        let mut point = Gf64::from_be_bytes(bytes);
        if point.is_zero() {
            point = Gf64::ONE;
        }
        FingerprintParams { point }
    }
}

/// A chunk fingerprint: the polynomial evaluation plus the point it was
/// computed at. Only the 8-byte value travels on the wire; the point is
/// implied by network parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fingerprint {
    pub value: Gf64,
    pub point: Gf64,
}

impl Fingerprint {
    pub fn to_be_bytes(&self) -> [u8; 8] {
        self.value.to_be_bytes()
    }

    pub fn from_be_bytes(bytes: [u8; 8], params: &FingerprintParams) -> Fingerprint {
        Fingerprint {
            value: Gf64::from_be_bytes(bytes),
            point: params.point,
        }
    }
}

/// Evaluate the chunk polynomial at the public point by Horner's rule.
/// The chunk must already be padded to a multiple of 8 bytes.
pub fn hf_compute(chunk: &[u8], params: &FingerprintParams) -> Result<Fingerprint, FingerprintError> {
    if chunk.len() % 8 != 0 {
        return Err(FingerprintError::UnpaddedChunk(chunk.len()));
    }
    let mut acc = Gf64::ZERO;
    for block in chunk.chunks_exact(8) {
        let coeff = Gf64::from_be_bytes(block.try_into().unwrap());
        acc = acc.mul(params.point).add(coeff);
    }
    Ok(Fingerprint {
        value: acc,
        point: params.point,
    })
}

/// Apply the generator matrix to K data fingerprints, producing the
/// fingerprints of all n encoded chunks without touching chunk data.
pub fn hf_encode(
    data_fps: &[Fingerprint],
    gen: &GeneratorMatrix,
) -> Result<Vec<Fingerprint>, FingerprintError> {
    if data_fps.len() != gen.k() {
        return Err(FingerprintError::CountMismatch {
            expected: gen.k(),
            got: data_fps.len(),
        });
    }
    let point = data_fps[0].point;
    if data_fps.iter().any(|fp| fp.point != point) {
        return Err(FingerprintError::MixedPoints);
    }

    let mut out = Vec::with_capacity(gen.n());
    for i in 0..gen.n() {
        let row = gen.row(i);
        let mut acc = Gf64::ZERO;
        for (j, &coeff) in row.iter().enumerate() {
            if coeff != Gf256::ZERO {
                acc = acc.add(data_fps[j].value.scale(coeff));
            }
        }
        out.push(Fingerprint { value: acc, point });
    }
    Ok(out)
}

/// Recompute and compare; false on any mismatch (including a chunk whose
/// length is not 8-byte aligned).
pub fn hf_verify(chunk: &[u8], expected: &Fingerprint, params: &FingerprintParams) -> bool {
    match hf_compute(chunk, params) {
        Ok(fp) => fp.value == expected.value && fp.point == expected.point,
        Err(_) => false,
    }
}
