//! GF(2^8) arithmetic and systematic Reed-Solomon coding.
//!
//! The field uses reduction polynomial `0x11D` (x^8 + x^4 + x^3 + x^2 + 1),
//! for which 2 generates the multiplicative group; multiplication goes
//! through log/exp tables.
//!
//! The generator matrix is built from a full (K+M)×K Vandermonde matrix at
//! the evaluation points 0..K+M-1 whose top K×K block is then row-reduced
//! to the identity. A raw Vandermonde block stacked under an identity is
//! *not* MDS over GF(2^8) in general; row-reducing a full Vandermonde
//! matrix preserves the property that every K×K row subset is invertible,
//! so any K chunks of an encoding recover the data.

use thiserror::Error;

use crate::types::ChunkIndex;

/// Field order minus one; also the cap on total chunks per encoding.
pub const MAX_CHUNKS: usize = 255;

const REDUCTION_POLY: u16 = 0x11D;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodingError {
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("K + M = {0} exceeds the field capacity of {MAX_CHUNKS}")]
    FieldCapacity(usize),
    #[error("generator needs K >= 1 and M >= 1, got K={k} M={m}")]
    BadShape { k: usize, m: usize },
    #[error("expected {expected} data rows of equal length, got {got}")]
    DataShape { expected: usize, got: usize },
    #[error("payload lengths differ within a chunk set")]
    UnequalPayloads,
    #[error("chunk index {0} outside 1..={1}")]
    BadIndex(u16, usize),
    #[error("duplicate chunk index {0}")]
    DuplicateIndex(u16),
    #[error("decoding needs at least {need} chunks, got {got}")]
    InsufficientChunks { need: usize, got: usize },
    #[error("chunk set is inconsistent: no data matches all provided chunks")]
    Inconsistent,
}

// Log/exp tables for GF(2^8)/0x11D, generated at compile time by repeated
// multiplication with the group generator 2.
pub(crate) const fn mul_no_table(mut a: u8, mut b: u8) -> u8 {
    let mut acc: u8 = 0;
    while b != 0 {
        if b & 1 != 0 {
            acc ^= a;
        }
        let carry = a & 0x80 != 0;
        a <<= 1;
        if carry {
            a ^= (REDUCTION_POLY & 0xFF) as u8;
        }
        b >>= 1;
    }
    acc
}

const fn build_exp() -> [u8; 512] {
    let mut exp = [0u8; 512];
    let mut x: u8 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x;
        exp[i + 255] = x;
        x = mul_no_table(x, 2);
        i += 1;
    }
    // exp[510..] never indexed: log sums stay below 510
    exp[510] = 1;
    exp[511] = 2;
    exp
}

const fn build_log() -> [u8; 256] {
    let mut log = [0u8; 256];
    let mut x: u8 = 1;
    let mut i = 0u8;
    loop {
        log[x as usize] = i;
        x = mul_no_table(x, 2);
        if i == 254 {
            break;
        }
        i += 1;
    }
    log
}

static EXP: [u8; 512] = build_exp();
static LOG: [u8; 256] = build_log();

/// An element of GF(2^8).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Gf256(pub u8);

impl Gf256 {
    pub const ZERO: Gf256 = Gf256(0);
    pub const ONE: Gf256 = Gf256(1);

    /// Field addition is XOR.
    #[inline]
    pub fn add(self, rhs: Gf256) -> Gf256 {
        Gf256(self.0 ^ rhs.0)
    }

    #[inline]
    pub fn mul(self, rhs: Gf256) -> Gf256 {
        if self.0 == 0 || rhs.0 == 0 {
            return Gf256::ZERO;
        }
        Gf256(EXP[LOG[self.0 as usize] as usize + LOG[rhs.0 as usize] as usize])
    }

    pub fn inv(self) -> Result<Gf256, CodingError> {
        if self.0 == 0 {
            return Err(CodingError::ZeroInverse);
        }
        Ok(Gf256(EXP[255 - LOG[self.0 as usize] as usize]))
    }

    pub fn pow(self, mut e: u32) -> Gf256 {
        if self.0 == 0 {
            return if e == 0 { Gf256::ONE } else { Gf256::ZERO };
        }
        let mut acc = Gf256::ONE;
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

/// Multiply field elements given as raw bytes.
#[inline]
pub fn gf_mul(a: u8, b: u8) -> u8 {
    Gf256(a).mul(Gf256(b)).0
}

/// Multiplicative inverse of a nonzero field element.
pub fn gf_inv(a: u8) -> Result<u8, CodingError> {
    Ok(Gf256(a).inv()?.0)
}

/// Systematic MDS generator matrix of shape (K+M)×K: the top K rows are
/// the identity, the bottom M rows produce parity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorMatrix {
    k: usize,
    rows: Vec<Vec<Gf256>>,
}

impl GeneratorMatrix {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.rows.len() - self.k
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Row `i` (0-based over all n rows).
    pub fn row(&self, i: usize) -> &[Gf256] {
        &self.rows[i]
    }
}

/// Build the systematic generator for a (K, M) code.
pub fn build_generator(k: usize, m: usize) -> Result<GeneratorMatrix, CodingError> {
    if k == 0 || m == 0 {
        return Err(CodingError::BadShape { k, m });
    }
    let n = k + m;
    if n > MAX_CHUNKS {
        return Err(CodingError::FieldCapacity(n));
    }

    // Full Vandermonde at distinct points 0..n-1; rows i: [a_i^0 .. a_i^{k-1}].
    let mut vand: Vec<Vec<Gf256>> = Vec::with_capacity(n);
    for i in 0..n {
        let a = Gf256(i as u8);
        let row: Vec<Gf256> = (0..k).map(|j| a.pow(j as u32)).collect();
        vand.push(row);
    }

    // Right-multiply by the inverse of the top K×K block so that block
    // becomes the identity. Any K rows of the result stay invertible.
    let top: Vec<Vec<Gf256>> = vand[..k].to_vec();
    let top_inv = invert(&top).expect("Vandermonde block with distinct points is invertible");

    let mut rows = Vec::with_capacity(n);
    for (i, vrow) in vand.iter().enumerate() {
        if i < k {
            let mut row = vec![Gf256::ZERO; k];
            row[i] = Gf256::ONE;
            rows.push(row);
        } else {
            rows.push(mat_vec_row(vrow, &top_inv));
        }
    }
    Ok(GeneratorMatrix { k, rows })
}

/// row × matrix (row vector times square matrix).
fn mat_vec_row(row: &[Gf256], mat: &[Vec<Gf256>]) -> Vec<Gf256> {
    let k = row.len();
    let mut out = vec![Gf256::ZERO; k];
    for (j, outj) in out.iter_mut().enumerate() {
        let mut acc = Gf256::ZERO;
        for (l, &rl) in row.iter().enumerate() {
            acc = acc.add(rl.mul(mat[l][j]));
        }
        *outj = acc;
    }
    out
}

/// Invert a square matrix by Gauss-Jordan elimination; `None` if singular.
pub fn invert(mat: &[Vec<Gf256>]) -> Option<Vec<Vec<Gf256>>> {
    let n = mat.len();
    let mut work = mat.to_vec();
    let mut inv: Vec<Vec<Gf256>> = (0..n)
        .map(|i| {
            let mut row = vec![Gf256::ZERO; n];
            row[i] = Gf256::ONE;
            row
        })
        .collect();

    for col in 0..n {
        let pivot = (col..n).find(|&r| work[r][col] != Gf256::ZERO)?;
        work.swap(pivot, col);
        inv.swap(pivot, col);

        let scale = work[col][col].inv().ok()?;
        for j in 0..n {
            work[col][j] = work[col][j].mul(scale);
            inv[col][j] = inv[col][j].mul(scale);
        }
        for r in 0..n {
            if r != col && work[r][col] != Gf256::ZERO {
                let factor = work[r][col];
                for j in 0..n {
                    let w = work[col][j].mul(factor);
                    work[r][j] = work[r][j].add(w);
                    let v = inv[col][j].mul(factor);
                    inv[r][j] = inv[r][j].add(v);
                }
            }
        }
    }
    Some(inv)
}

/// One erasure-coded fragment: 1-based index plus payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub index: ChunkIndex,
    pub payload: Vec<u8>,
}

/// A set of chunks with distinct indices and equal payload lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkSet {
    chunks: Vec<Chunk>,
}

impl ChunkSet {
    pub fn new(chunks: Vec<Chunk>, n: usize) -> Result<ChunkSet, CodingError> {
        let mut seen = vec![false; n + 1];
        let mut len: Option<usize> = None;
        for c in &chunks {
            let idx = c.index.0 as usize;
            if idx == 0 || idx > n {
                return Err(CodingError::BadIndex(c.index.0, n));
            }
            if seen[idx] {
                return Err(CodingError::DuplicateIndex(c.index.0));
            }
            seen[idx] = true;
            match len {
                None => len = Some(c.payload.len()),
                Some(l) if l != c.payload.len() => return Err(CodingError::UnequalPayloads),
                _ => {}
            }
        }
        Ok(ChunkSet { chunks })
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn into_chunks(self) -> Vec<Chunk> {
        self.chunks
    }
}

/// Encode K equal-length data rows into n = K+M chunks. Chunks 1..=K carry
/// the data verbatim; chunks K+1..=n carry parity.
pub fn rs_encode(data: &[Vec<u8>], gen: &GeneratorMatrix) -> Result<ChunkSet, CodingError> {
    let k = gen.k();
    if data.len() != k {
        return Err(CodingError::DataShape {
            expected: k,
            got: data.len(),
        });
    }
    let len = data[0].len();
    if data.iter().any(|d| d.len() != len) {
        return Err(CodingError::UnequalPayloads);
    }

    let mut chunks = Vec::with_capacity(gen.n());
    for (i, row) in (0..gen.n()).map(|i| (i, gen.row(i))) {
        let payload = if i < k {
            data[i].clone()
        } else {
            let mut payload = vec![0u8; len];
            for (j, coeff) in row.iter().enumerate() {
                if *coeff == Gf256::ZERO {
                    continue;
                }
                if *coeff == Gf256::ONE {
                    for (p, &d) in payload.iter_mut().zip(&data[j]) {
                        *p ^= d;
                    }
                } else {
                    let log_c = LOG[coeff.0 as usize] as usize;
                    for (p, &d) in payload.iter_mut().zip(&data[j]) {
                        if d != 0 {
                            *p ^= EXP[log_c + LOG[d as usize] as usize];
                        }
                    }
                }
            }
            payload
        };
        chunks.push(Chunk {
            index: ChunkIndex((i + 1) as u16),
            payload,
        });
    }
    ChunkSet::new(chunks, gen.n())
}

/// Recover the K data rows from any K chunks with distinct indices.
///
/// If more than K chunks are given, the extras are checked against the
/// decoded data; a mismatch means the set was mutually inconsistent.
pub fn rs_decode(
    subset: &ChunkSet,
    gen: &GeneratorMatrix,
    k: usize,
) -> Result<Vec<Vec<u8>>, CodingError> {
    if k != gen.k() {
        return Err(CodingError::DataShape {
            expected: gen.k(),
            got: k,
        });
    }
    if subset.len() < k {
        return Err(CodingError::InsufficientChunks {
            need: k,
            got: subset.len(),
        });
    }
    for c in subset.chunks() {
        let idx = c.index.0 as usize;
        if idx == 0 || idx > gen.n() {
            return Err(CodingError::BadIndex(c.index.0, gen.n()));
        }
    }

    // Deterministic choice: lowest K indices solve the system.
    let mut order: Vec<usize> = (0..subset.len()).collect();
    order.sort_by_key(|&i| subset.chunks()[i].index.0);
    let solve = &order[..k];

    let mat: Vec<Vec<Gf256>> = solve
        .iter()
        .map(|&i| gen.row(subset.chunks()[i].index.0 as usize - 1).to_vec())
        .collect();
    let inv = invert(&mat).ok_or(CodingError::Inconsistent)?;

    let len = subset.chunks()[0].payload.len();
    let mut data = vec![vec![0u8; len]; k];
    for (r, drow) in data.iter_mut().enumerate() {
        for (c, &si) in solve.iter().enumerate() {
            let coeff = inv[r][c];
            if coeff == Gf256::ZERO {
                continue;
            }
            let log_c = LOG[coeff.0 as usize] as usize;
            let payload = &subset.chunks()[si].payload;
            if coeff == Gf256::ONE {
                for (d, &p) in drow.iter_mut().zip(payload) {
                    *d ^= p;
                }
            } else {
                for (d, &p) in drow.iter_mut().zip(payload) {
                    if p != 0 {
                        *d ^= EXP[log_c + LOG[p as usize] as usize];
                    }
                }
            }
        }
    }

    // Extra chunks must agree with a re-encoding of the solution.
    if subset.len() > k {
        for &i in &order[k..] {
            let chunk = &subset.chunks()[i];
            let row = gen.row(chunk.index.0 as usize - 1);
            for (b, expected) in chunk.payload.iter().enumerate() {
                let mut acc = 0u8;
                for (j, coeff) in row.iter().enumerate() {
                    acc ^= gf_mul(coeff.0, data[j][b]);
                }
                if acc != *expected {
                    return Err(CodingError::Inconsistent);
                }
            }
        }
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Independent oracle: carry-less multiply then reduce by 0x11D.
    fn clmul_reduce(a: u8, b: u8) -> u8 {
        let mut acc: u16 = 0;
        for i in 0..8 {
            if (b >> i) & 1 == 1 {
                acc ^= (a as u16) << i;
            }
        }
        for bit in (8..16).rev() {
            if (acc >> bit) & 1 == 1 {
                acc ^= REDUCTION_POLY << (bit - 8);
            }
        }
        acc as u8
    }

    #[test]
    fn mul_annihilator_and_identity() {
        for a in 0..=255u8 {
            assert_eq!(gf_mul(a, 0), 0);
            assert_eq!(gf_mul(a, 1), a);
        }
    }

    #[test]
    fn mul_matches_clmul_oracle_exhaustively() {
        for a in 0..=255u16 {
            for b in 0..=255u16 {
                assert_eq!(gf_mul(a as u8, b as u8), clmul_reduce(a as u8, b as u8));
            }
        }
    }

    #[test]
    fn known_product_under_0x11d() {
        assert_eq!(gf_mul(0x02, 0x80), 0x1D);
    }

    #[test]
    fn inverse_of_every_nonzero_element() {
        assert_eq!(gf_inv(1).unwrap(), 1);
        for a in 1..=255u8 {
            let inv = gf_inv(a).unwrap();
            assert_eq!(gf_mul(a, inv), 1, "a={a}");
        }
        assert_eq!(gf_inv(0), Err(CodingError::ZeroInverse));
    }

    #[test]
    fn field_axioms_on_random_triples() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let (a, b, c): (u8, u8, u8) = (rng.gen(), rng.gen(), rng.gen());
            assert_eq!(gf_mul(a, b), gf_mul(b, a));
            assert_eq!(gf_mul(gf_mul(a, b), c), gf_mul(a, gf_mul(b, c)));
            assert_eq!(gf_mul(a, b ^ c), gf_mul(a, b) ^ gf_mul(a, c));
        }
    }

    #[test]
    fn repetition_code_generator() {
        let g = build_generator(1, 1).unwrap();
        assert_eq!(g.row(0), &[Gf256::ONE]);
        assert_eq!(g.row(1), &[Gf256::ONE]);
    }

    #[test]
    fn systematic_identity_block() {
        let g = build_generator(3, 1).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { Gf256::ONE } else { Gf256::ZERO };
                assert_eq!(g.row(i)[j], want);
            }
        }
        // For points 0..3 the parity row is all ones, making parity a plain XOR.
        assert_eq!(g.row(3), &[Gf256::ONE; 3]);
    }

    #[test]
    fn generator_shape_errors() {
        assert!(matches!(
            build_generator(0, 1),
            Err(CodingError::BadShape { .. })
        ));
        assert!(matches!(
            build_generator(200, 56),
            Err(CodingError::FieldCapacity(256))
        ));
        assert!(build_generator(200, 55).is_ok());
    }

    fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            out.push(idx.clone());
            let mut i = k;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if idx[i] != i + n - k {
                    break;
                }
            }
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }

    #[test]
    fn mds_every_k_subset_invertible_up_to_12() {
        for n in 2..=12usize {
            for k in 1..n {
                let m = n - k;
                let g = build_generator(k, m).unwrap();
                for subset in subsets(n, k) {
                    let mat: Vec<Vec<Gf256>> =
                        subset.iter().map(|&r| g.row(r).to_vec()).collect();
                    assert!(
                        invert(&mat).is_some(),
                        "singular {k}x{k} submatrix rows {subset:?} for (K={k},M={m})"
                    );
                }
            }
        }
    }

    #[test]
    fn encode_zero_is_zero() {
        let g = build_generator(3, 2).unwrap();
        let data = vec![vec![0u8; 8]; 3];
        let cs = rs_encode(&data, &g).unwrap();
        assert!(cs.chunks().iter().all(|c| c.payload.iter().all(|&b| b == 0)));
    }

    #[test]
    fn xor_parity_special_case() {
        let g = build_generator(3, 1).unwrap();
        let data = vec![vec![1u8, 2, 3], vec![4, 5, 6], vec![7, 8, 9]];
        let cs = rs_encode(&data, &g).unwrap();
        for b in 0..3 {
            assert_eq!(
                cs.chunks()[3].payload[b],
                data[0][b] ^ data[1][b] ^ data[2][b]
            );
        }
    }

    #[test]
    fn encode_matches_schoolbook_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let g = build_generator(3, 2).unwrap();
        let data: Vec<Vec<u8>> = (0..3)
            .map(|_| (0..8).map(|_| rng.gen()).collect())
            .collect();
        let cs = rs_encode(&data, &g).unwrap();
        // Naive per-byte matrix multiply, written separately from rs_encode.
        for (i, chunk) in cs.chunks().iter().enumerate() {
            for b in 0..8 {
                let mut acc = 0u8;
                for j in 0..3 {
                    acc ^= gf_mul(g.row(i)[j].0, data[j][b]);
                }
                assert_eq!(chunk.payload[b], acc, "chunk {i} byte {b}");
            }
        }
    }

    #[test]
    fn systematic_prefix_decodes_verbatim() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let g = build_generator(4, 2).unwrap();
        let data: Vec<Vec<u8>> = (0..4)
            .map(|_| (0..16).map(|_| rng.gen()).collect())
            .collect();
        let cs = rs_encode(&data, &g).unwrap();
        let prefix = ChunkSet::new(cs.chunks()[..4].to_vec(), g.n()).unwrap();
        assert_eq!(rs_decode(&prefix, &g, 4).unwrap(), data);
    }

    #[test]
    fn decode_from_every_subset_small_shapes() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for (k, m) in [(1usize, 1usize), (2, 2), (3, 2), (5, 3), (7, 3), (9, 3)] {
            let g = build_generator(k, m).unwrap();
            let data: Vec<Vec<u8>> = (0..k)
                .map(|_| (0..8).map(|_| rng.gen()).collect())
                .collect();
            let encoded = rs_encode(&data, &g).unwrap();
            for subset in subsets(k + m, k) {
                let chunks: Vec<Chunk> = subset
                    .iter()
                    .map(|&i| encoded.chunks()[i].clone())
                    .collect();
                let cs = ChunkSet::new(chunks, g.n()).unwrap();
                assert_eq!(rs_decode(&cs, &g, k).unwrap(), data, "subset {subset:?}");
            }
        }
    }

    #[test]
    fn bit_flip_changes_output_without_error() {
        // With exactly K chunks the system is always solvable; a flipped
        // payload bit silently yields different data (fingerprints catch
        // this upstream).
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let g = build_generator(3, 2).unwrap();
        let data: Vec<Vec<u8>> = (0..3)
            .map(|_| (0..8).map(|_| rng.gen()).collect())
            .collect();
        let encoded = rs_encode(&data, &g).unwrap();
        let mut chunks = encoded.chunks()[1..4].to_vec();
        chunks[0].payload[0] ^= 0x01;
        let cs = ChunkSet::new(chunks, g.n()).unwrap();
        let decoded = rs_decode(&cs, &g, 3).unwrap();
        assert_ne!(decoded, data);
    }

    #[test]
    fn inconsistent_extra_chunk_detected() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let g = build_generator(3, 2).unwrap();
        let data: Vec<Vec<u8>> = (0..3)
            .map(|_| (0..8).map(|_| rng.gen()).collect())
            .collect();
        let encoded = rs_encode(&data, &g).unwrap();
        let mut chunks = encoded.chunks().to_vec();
        chunks[4].payload[2] ^= 0xFF;
        let cs = ChunkSet::new(chunks, g.n()).unwrap();
        assert_eq!(rs_decode(&cs, &g, 3), Err(CodingError::Inconsistent));
    }

    #[test]
    fn insufficient_chunks_error() {
        let g = build_generator(3, 2).unwrap();
        let cs = ChunkSet::new(
            vec![Chunk {
                index: ChunkIndex(1),
                payload: vec![0; 8],
            }],
            g.n(),
        )
        .unwrap();
        assert_eq!(
            rs_decode(&cs, &g, 3),
            Err(CodingError::InsufficientChunks { need: 3, got: 1 })
        );
    }

    #[test]
    fn chunk_set_rejects_duplicates_and_bad_indices() {
        let mk = |idx: u16| Chunk {
            index: ChunkIndex(idx),
            payload: vec![0; 4],
        };
        assert!(matches!(
            ChunkSet::new(vec![mk(1), mk(1)], 5),
            Err(CodingError::DuplicateIndex(1))
        ));
        assert!(matches!(
            ChunkSet::new(vec![mk(0)], 5),
            Err(CodingError::BadIndex(0, 5))
        ));
        assert!(matches!(
            ChunkSet::new(vec![mk(6)], 5),
            Err(CodingError::BadIndex(6, 5))
        ));
    }

    #[test]
    fn linearity_of_encoding() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let g = build_generator(4, 3).unwrap();
        let d1: Vec<Vec<u8>> = (0..4)
            .map(|_| (0..8).map(|_| rng.gen()).collect())
            .collect();
        let d2: Vec<Vec<u8>> = (0..4)
            .map(|_| (0..8).map(|_| rng.gen()).collect())
            .collect();
        let sum: Vec<Vec<u8>> = d1
            .iter()
            .zip(&d2)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x ^ y).collect())
            .collect();
        let e1 = rs_encode(&d1, &g).unwrap();
        let e2 = rs_encode(&d2, &g).unwrap();
        let es = rs_encode(&sum, &g).unwrap();
        for i in 0..g.n() {
            let xor: Vec<u8> = e1.chunks()[i]
                .payload
                .iter()
                .zip(&e2.chunks()[i].payload)
                .map(|(a, b)| a ^ b)
                .collect();
            assert_eq!(es.chunks()[i].payload, xor);
        }
    }

    #[test]
    fn sampled_roundtrip_larger_shapes() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for (k, m) in [(27usize, 13usize), (15, 7), (40, 20)] {
            let g = build_generator(k, m).unwrap();
            let data: Vec<Vec<u8>> = (0..k)
                .map(|_| (0..32).map(|_| rng.gen()).collect())
                .collect();
            let encoded = rs_encode(&data, &g).unwrap();
            for _ in 0..20 {
                let mut pool: Vec<usize> = (0..k + m).collect();
                let mut picked = Vec::new();
                for _ in 0..k {
                    let at = rng.gen_range(0..pool.len());
                    picked.push(pool.swap_remove(at));
                }
                let chunks: Vec<Chunk> = picked
                    .iter()
                    .map(|&i| encoded.chunks()[i].clone())
                    .collect();
                let cs = ChunkSet::new(chunks, g.n()).unwrap();
                assert_eq!(rs_decode(&cs, &g, k).unwrap(), data);
            }
        }
    }
}
