//! Bloom filter over canonical n-gram keys with a stable on-disk format.
//!
//! Bit positions use double hashing, `index_i = (h1 + i * h2) mod m` for
//! `i in 0..k`, evaluated exactly (no wrap-around). `h1` is FNV-1a-64 of the
//! key with the standard offset basis and `h2` is FNV-1a-64 with the basis
//! XORed with `0x9E3779B97F4A7C15`, forced odd. This is hash scheme 1.
//!
//! File layout, little-endian:
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `MFBF` |
//! | 2 | format version (1) |
//! | 1 | hash scheme (1) |
//! | 1 | reserved (0) |
//! | 2 | n |
//! | 2 | k |
//! | 4 | min_count |
//! | 8 | fp (IEEE-754 double) |
//! | 8 | m_bits |
//! | 8 | inserted |
//! | ceil(m_bits/8) | bits, bit `b` at byte `b/8`, bit `b%8` |
//! | 8 | FNV-1a-64 of the bit bytes |

use std::collections::HashSet;
use std::io::{Read, Write};

use log::warn;

use crate::error::{Error, FormatError, Result};
use crate::ngram::decode_key;
use crate::tokenizer::TokenId;

pub const MAGIC: [u8; 4] = *b"MFBF";
pub const FORMAT_VERSION: u16 = 1;
pub const HASH_SCHEME: u8 = 1;
pub const DEFAULT_FP: f64 = 0.01;

const HEADER_LEN: usize = 40;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const SECOND_BASIS_XOR: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy)]
struct Fnv1a(u64);

impl Fnv1a {
    fn with_basis(basis: u64) -> Self {
        Fnv1a(basis)
    }

    #[inline]
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a::with_basis(FNV_OFFSET);
    h.write(bytes);
    h.0
}

#[inline]
fn hash_pair(key: &[u8]) -> (u64, u64) {
    let mut a = Fnv1a::with_basis(FNV_OFFSET);
    let mut b = Fnv1a::with_basis(FNV_OFFSET ^ SECOND_BASIS_XOR);
    a.write(key);
    b.write(key);
    (a.0, b.0 | 1)
}

#[inline]
fn hash_pair_tokens(ngram: &[TokenId]) -> (u64, u64) {
    let mut a = Fnv1a::with_basis(FNV_OFFSET);
    let mut b = Fnv1a::with_basis(FNV_OFFSET ^ SECOND_BASIS_XOR);
    for t in ngram {
        let bytes = t.to_le_bytes();
        a.write(&bytes);
        b.write(&bytes);
    }
    (a.0, b.0 | 1)
}

/// Position sequence `(h1 + i*h2) mod m`, stepped without overflow.
#[derive(Debug, Clone)]
struct Positions {
    pos: u64,
    step: u64,
    m: u64,
    left: u32,
}

impl Positions {
    fn new((h1, h2): (u64, u64), k: u32, m: u64) -> Self {
        Positions {
            pos: h1 % m,
            step: h2 % m,
            m,
            left: k,
        }
    }
}

impl Iterator for Positions {
    type Item = u64;

    #[inline]
    fn next(&mut self) -> Option<u64> {
        if self.left == 0 {
            return None;
        }
        self.left -= 1;
        let out = self.pos;
        self.pos = ((u128::from(self.pos) + u128::from(self.step)) % u128::from(self.m)) as u64;
        Some(out)
    }
}

/// The `k` bit indices for `key` in a filter of `m_bits` bits.
pub fn bit_positions(key: &[u8], k: u32, m_bits: u64) -> Vec<u64> {
    assert!(m_bits >= 1, "filter must have at least one bit");
    Positions::new(hash_pair(key), k, m_bits).collect()
}

/// `m = ceil(-(N ln fp) / (ln 2)^2)` and `k = ceil((m / N) ln 2)`.
pub fn size_parameters(expected_items: u64, fp: f64) -> Result<(u64, u32)> {
    if expected_items < 1 {
        return Err(Error::domain("expected item count must be at least 1"));
    }
    if !(fp > 0.0 && fp < 1.0) {
        return Err(Error::domain(format!("false-positive rate {fp} is outside (0, 1)")));
    }
    let ln2 = std::f64::consts::LN_2;
    let n = expected_items as f64;
    let m = (-(n * fp.ln()) / (ln2 * ln2)).ceil();
    if !m.is_finite() || m >= u64::MAX as f64 {
        return Err(Error::domain("filter size overflows 64 bits"));
    }
    let m_bits = (m as u64).max(1);
    let k = ((m_bits as f64 / n) * ln2).ceil().max(1.0) as u32;
    Ok((m_bits, k))
}

/// Expected false-positive probability `(1 - e^(-k i / m))^k` after `i` inserts.
pub fn effective_fp(k: u32, m_bits: u64, inserted: u64) -> f64 {
    let exponent = -(f64::from(k) * inserted as f64) / m_bits as f64;
    (1.0 - exponent.exp()).powi(k as i32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    /// The N the filter was sized for. Not stored on disk; a loaded filter
    /// reports its insert count here.
    pub expected_items: u64,
    pub fp: f64,
    pub m_bits: u64,
    pub k: u32,
    pub n: usize,
    pub min_count: u64,
}

impl FilterParams {
    pub fn new(expected_items: u64, fp: f64, n: usize, min_count: u64) -> Result<Self> {
        let (m_bits, k) = size_parameters(expected_items, fp)?;
        let params = FilterParams {
            expected_items,
            fp,
            m_bits,
            k,
            n,
            min_count,
        };
        params.validate()?;
        Ok(params)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > usize::from(u16::MAX) {
            return Err(Error::domain(format!("n = {} must be in 1..=65535", self.n)));
        }
        if self.k == 0 || self.k > u32::from(u16::MAX) {
            return Err(Error::domain(format!("k = {} must be in 1..=65535", self.k)));
        }
        if self.min_count == 0 || self.min_count > u64::from(u32::MAX) {
            return Err(Error::domain("min_count must be in 1..=2^32-1"));
        }
        Ok(())
    }

    fn words(&self) -> usize {
        self.m_bits.div_ceil(64) as usize
    }
}

/// Mutable build-phase filter. Call [`seal`](Self::seal) once all keys are in.
#[derive(Debug, Clone)]
pub struct FilterBuilder {
    params: FilterParams,
    bits: Vec<u64>,
    inserted: u64,
}

impl FilterBuilder {
    pub fn new(params: FilterParams) -> Self {
        FilterBuilder {
            bits: vec![0; params.words()],
            params,
            inserted: 0,
        }
    }

    pub fn insert(&mut self, key: &[u8]) {
        for p in Positions::new(hash_pair(key), self.params.k, self.params.m_bits) {
            self.bits[(p / 64) as usize] |= 1 << (p % 64);
        }
        self.inserted += 1;
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        test_bits(&self.bits, Positions::new(hash_pair(key), self.params.k, self.params.m_bits))
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn seal(self) -> NGramFilter {
        let limit = self.params.expected_items as f64 * 1.1;
        if self.inserted as f64 > limit {
            warn!(
                "filter sized for {} items received {}; effective false-positive rate is {:.6} (configured {})",
                self.params.expected_items,
                self.inserted,
                effective_fp(self.params.k, self.params.m_bits, self.inserted),
                self.params.fp
            );
        }
        NGramFilter {
            params: self.params,
            bits: self.bits,
            inserted: self.inserted,
            hash_scheme: HASH_SCHEME,
        }
    }
}

#[inline]
fn test_bits(bits: &[u64], mut positions: Positions) -> bool {
    positions.all(|p| bits[(p / 64) as usize] & (1 << (p % 64)) != 0)
}

/// Sealed, read-only filter.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramFilter {
    params: FilterParams,
    bits: Vec<u64>,
    inserted: u64,
    hash_scheme: u8,
}

impl NGramFilter {
    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn hash_scheme(&self) -> u8 {
        self.hash_scheme
    }

    pub fn population(&self) -> u64 {
        self.bits.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    /// Fraction of bits set.
    pub fn load(&self) -> f64 {
        self.population() as f64 / self.params.m_bits as f64
    }

    pub fn effective_fp(&self) -> f64 {
        effective_fp(self.params.k, self.params.m_bits, self.inserted)
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        test_bits(&self.bits, Positions::new(hash_pair(key), self.params.k, self.params.m_bits))
    }

    /// Same as `contains(&canonical_key(ngram))` without building the key.
    pub fn contains_tokens(&self, ngram: &[TokenId]) -> bool {
        test_bits(
            &self.bits,
            Positions::new(hash_pair_tokens(ngram), self.params.k, self.params.m_bits),
        )
    }

    fn bit_bytes(&self) -> Vec<u8> {
        let len = self.params.m_bits.div_ceil(8) as usize;
        let mut out = Vec::with_capacity(self.bits.len() * 8);
        for w in &self.bits {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.truncate(len);
        out
    }

    pub fn serialize<W: Write>(&self, mut sink: W) -> Result<()> {
        let p = &self.params;
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(&MAGIC);
        header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        header.push(self.hash_scheme);
        header.push(0);
        header.extend_from_slice(&(p.n as u16).to_le_bytes());
        header.extend_from_slice(&(p.k as u16).to_le_bytes());
        header.extend_from_slice(&(p.min_count as u32).to_le_bytes());
        header.extend_from_slice(&p.fp.to_le_bytes());
        header.extend_from_slice(&p.m_bits.to_le_bytes());
        header.extend_from_slice(&self.inserted.to_le_bytes());
        debug_assert_eq!(header.len(), HEADER_LEN);

        let bits = self.bit_bytes();
        sink.write_all(&header)?;
        sink.write_all(&bits)?;
        sink.write_all(&fnv1a64(&bits).to_le_bytes())?;
        sink.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.serialize(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn deserialize<R: Read>(mut source: R) -> Result<Self> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        Ok(Self::from_bytes(&bytes)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());

        if bytes.len() < 4 {
            return Err(FormatError::Checksum);
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(FormatError::BadMagic(magic));
        }
        if bytes.len() < 7 {
            return Err(FormatError::Checksum);
        }
        let version = u16_at(4);
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        if bytes[6] != HASH_SCHEME {
            return Err(FormatError::UnsupportedHashScheme(bytes[6]));
        }
        if bytes.len() < HEADER_LEN {
            return Err(FormatError::Checksum);
        }
        let n = usize::from(u16_at(8));
        let k = u32::from(u16_at(10));
        let min_count = u64::from(u32::from_le_bytes(bytes[12..16].try_into().unwrap()));
        let fp = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let m_bits = u64_at(24);
        let inserted = u64_at(32);
        if m_bits == 0 || k == 0 || n == 0 {
            return Err(FormatError::Header("zero n, k or m_bits".into()));
        }
        if !(fp > 0.0 && fp < 1.0) {
            return Err(FormatError::Header(format!("fp {fp} outside (0, 1)")));
        }
        let bit_len = usize::try_from(m_bits.div_ceil(8))
            .map_err(|_| FormatError::Header("m_bits too large".into()))?;
        let expected = HEADER_LEN
            .checked_add(bit_len)
            .and_then(|v| v.checked_add(8))
            .ok_or_else(|| FormatError::Header("m_bits too large".into()))?;
        if bytes.len() != expected {
            return Err(FormatError::Checksum);
        }
        let bit_bytes = &bytes[HEADER_LEN..HEADER_LEN + bit_len];
        if fnv1a64(bit_bytes) != u64_at(HEADER_LEN + bit_len) {
            return Err(FormatError::Checksum);
        }
        let tail_bits = m_bits % 8;
        if tail_bits != 0 && bit_bytes[bit_len - 1] >> tail_bits != 0 {
            return Err(FormatError::Header("bits set beyond m_bits".into()));
        }

        let mut bits = vec![0u64; m_bits.div_ceil(64) as usize];
        for (i, chunk) in bit_bytes.chunks(8).enumerate() {
            let mut word = [0u8; 8];
            word[..chunk.len()].copy_from_slice(chunk);
            bits[i] = u64::from_le_bytes(word);
        }
        Ok(NGramFilter {
            params: FilterParams {
                expected_items: inserted.max(1),
                fp,
                m_bits,
                k,
                n,
                min_count,
            },
            bits,
            inserted,
            hash_scheme: bytes[6],
        })
    }
}

/// Anything that answers "is this n-gram stored".
pub trait NGramMembership: Sync {
    fn ngram_len(&self) -> usize;
    fn contains_ngram(&self, ngram: &[TokenId]) -> bool;
}

impl NGramMembership for NGramFilter {
    fn ngram_len(&self) -> usize {
        self.params.n
    }

    fn contains_ngram(&self, ngram: &[TokenId]) -> bool {
        self.contains_tokens(ngram)
    }
}

/// Exact stored set; the fp = 0 reference for the Bloom filter.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExactNGramSet {
    n: usize,
    set: HashSet<Vec<TokenId>>,
}

impl ExactNGramSet {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "n-gram length must be at least 1");
        ExactNGramSet {
            n,
            set: HashSet::new(),
        }
    }

    pub fn from_keys<'a, I: IntoIterator<Item = &'a Vec<u8>>>(n: usize, keys: I) -> Self {
        let mut s = ExactNGramSet::new(n);
        for k in keys {
            let tokens = decode_key(k).expect("canonical keys are multiples of 4 bytes");
            s.insert(tokens);
        }
        s
    }

    pub fn insert(&mut self, ngram: Vec<TokenId>) {
        assert_eq!(ngram.len(), self.n, "n-gram length mismatch");
        self.set.insert(ngram);
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<TokenId>> {
        self.set.iter()
    }
}

impl NGramMembership for ExactNGramSet {
    fn ngram_len(&self) -> usize {
        self.n
    }

    fn contains_ngram(&self, ngram: &[TokenId]) -> bool {
        self.set.contains(ngram)
    }
}
