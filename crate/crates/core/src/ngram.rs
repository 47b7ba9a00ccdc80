//! n-gram enumeration, counting and frequency selection.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, Tokenizer};

pub const DEFAULT_N: usize = 10;
pub const DEFAULT_MIN_COUNT: u64 = 10;

/// Overlapping length-`n` windows, in order. Sequences shorter than `n`
/// yield nothing.
///
/// # Panics
/// If `n == 0`.
pub fn ngram_windows(tokens: &[TokenId], n: usize) -> std::slice::Windows<'_, TokenId> {
    assert!(n >= 1, "n-gram length must be at least 1");
    tokens.windows(n)
}

/// Little-endian u32 per token, concatenated.
pub fn canonical_key(ngram: &[TokenId]) -> Vec<u8> {
    let mut key = Vec::with_capacity(ngram.len() * 4);
    write_canonical_key(ngram, &mut key);
    key
}

pub fn write_canonical_key(ngram: &[TokenId], out: &mut Vec<u8>) {
    for t in ngram {
        out.extend_from_slice(&t.to_le_bytes());
    }
}

/// Same as [`canonical_key`] for wider ids; ids that do not fit in 32 bits
/// are rejected.
pub fn canonical_key_wide(ngram: &[u64]) -> Result<Vec<u8>> {
    let narrow = ngram
        .iter()
        .map(|&t| {
            TokenId::try_from(t).map_err(|_| Error::domain(format!("token id {t} exceeds 2^32 - 1")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(canonical_key(&narrow))
}

pub fn decode_key(key: &[u8]) -> Option<Vec<TokenId>> {
    if !key.len().is_multiple_of(4) {
        return None;
    }
    Some(
        key.chunks_exact(4)
            .map(|c| TokenId::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramCounts {
    pub n: usize,
    pub counts: HashMap<Vec<u8>, u64>,
    pub total_windows: u64,
}

impl NGramCounts {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "n-gram length must be at least 1");
        NGramCounts {
            n,
            counts: HashMap::new(),
            total_windows: 0,
        }
    }

    /// Adds every window of one document. Windows never cross calls.
    pub fn add_document(&mut self, tokens: &[TokenId]) {
        let mut key = Vec::with_capacity(self.n * 4);
        for w in ngram_windows(tokens, self.n) {
            key.clear();
            write_canonical_key(w, &mut key);
            match self.counts.get_mut(key.as_slice()) {
                Some(c) => *c += 1,
                None => {
                    self.counts.insert(key.clone(), 1);
                }
            }
            self.total_windows += 1;
        }
    }

    pub fn merge(&mut self, other: NGramCounts) {
        assert_eq!(self.n, other.n, "cannot merge counts of different n");
        for (k, v) in other.counts {
            *self.counts.entry(k).or_insert(0) += v;
        }
        self.total_windows += other.total_windows;
    }

    pub fn count(&self, ngram: &[TokenId]) -> u64 {
        self.counts.get(&canonical_key(ngram)).copied().unwrap_or(0)
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Binary record dump, sorted by key: `u32` key length, key bytes,
    /// `u64` count, all little-endian.
    pub fn write_dump<W: Write>(&self, out: W) -> Result<()> {
        let mut sorted: Vec<_> = self.counts.iter().collect();
        sorted.sort();
        write_count_records(out, sorted.into_iter().map(|(k, v)| (k.as_slice(), *v)))
    }

    pub fn read_dump<R: Read>(input: R, n: usize) -> Result<Self> {
        let mut counts = NGramCounts::new(n);
        for rec in read_count_records(input)? {
            let (key, count) = rec;
            if key.len() != n * 4 {
                return Err(Error::domain(format!(
                    "counts dump has a {}-byte key, expected {}",
                    key.len(),
                    n * 4
                )));
            }
            counts.total_windows += count;
            counts.counts.insert(key, count);
        }
        Ok(counts)
    }
}

pub(crate) fn write_count_records<'a, W, I>(out: W, records: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a [u8], u64)>,
{
    let mut out = BufWriter::new(out);
    for (key, count) in records {
        out.write_all(&(key.len() as u32).to_le_bytes())?;
        out.write_all(key)?;
        out.write_all(&count.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn read_count_records<R: Read>(input: R) -> Result<Vec<(Vec<u8>, u64)>> {
    let mut input = BufReader::new(input);
    let mut out = Vec::new();
    let mut len_buf = [0u8; 4];
    loop {
        if !read_exact_or_eof(&mut input, &mut len_buf)? {
            break;
        }
        let len = u32::from_le_bytes(len_buf) as usize;
        let mut key = vec![0u8; len];
        input.read_exact(&mut key)?;
        let mut count = [0u8; 8];
        input.read_exact(&mut count)?;
        out.push((key, u64::from_le_bytes(count)));
    }
    Ok(out)
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        let got = r.read(&mut buf[filled..])?;
        if got == 0 {
            if filled == 0 {
                return Ok(false);
            }
            return Err(std::io::Error::from(std::io::ErrorKind::UnexpectedEof).into());
        }
        filled += got;
    }
    Ok(true)
}

/// Counts every n-window of every document in one pass.
pub fn count_ngrams<I>(docs: I, n: usize, tokenizer: &Tokenizer) -> Result<NGramCounts>
where
    I: IntoIterator<Item = Result<Document>>,
{
    let mut counts = NGramCounts::new(n);
    for doc in docs {
        let doc = doc?;
        counts.add_document(&tokenizer.tokenize(&doc.text));
    }
    Ok(counts)
}

/// Keys whose count is at least `min_count`.
pub fn select_frequent(counts: &NGramCounts, min_count: u64) -> BTreeSet<Vec<u8>> {
    counts
        .counts
        .iter()
        .filter(|(_, &c)| c >= min_count.max(1))
        .map(|(k, _)| k.clone())
        .collect()
}

/// Two-pass counting for corpora whose distinct n-grams do not fit in
/// memory. Pass one spills each window key to a shard file chosen by key
/// hash; pass two counts each shard independently and keeps the frequent
/// keys. Equivalent to `select_frequent(count_ngrams(..), min_count)`.
pub fn frequent_ngrams_sharded<I>(
    docs: I,
    n: usize,
    tokenizer: &Tokenizer,
    min_count: u64,
    shards: usize,
    scratch: &Path,
) -> Result<(BTreeSet<Vec<u8>>, u64)>
where
    I: IntoIterator<Item = Result<Document>>,
{
    assert!(n >= 1, "n-gram length must be at least 1");
    let shards = shards.max(1);
    let paths: Vec<_> = (0..shards)
        .map(|i| scratch.join(format!("ngram-shard-{i:04}.bin")))
        .collect();
    let mut writers = paths
        .iter()
        .map(|p| File::create(p).map(BufWriter::new))
        .collect::<std::io::Result<Vec<_>>>()?;

    let mut total = 0u64;
    let mut key = Vec::with_capacity(n * 4);
    for doc in docs {
        let tokens = tokenizer.tokenize(&doc?.text);
        for w in ngram_windows(&tokens, n) {
            key.clear();
            write_canonical_key(w, &mut key);
            let mut h = DefaultHasher::new();
            key.hash(&mut h);
            writers[(h.finish() % shards as u64) as usize].write_all(&key)?;
            total += 1;
        }
    }
    for w in &mut writers {
        w.flush()?;
    }
    drop(writers);

    let mut frequent = BTreeSet::new();
    let key_len = n * 4;
    for p in &paths {
        let mut bytes = Vec::new();
        File::open(p)?.read_to_end(&mut bytes)?;
        let mut shard: HashMap<&[u8], u64> = HashMap::new();
        for k in bytes.chunks_exact(key_len) {
            *shard.entry(k).or_insert(0) += 1;
        }
        frequent.extend(
            shard
                .into_iter()
                .filter(|(_, c)| *c >= min_count.max(1))
                .map(|(k, _)| k.to_vec()),
        );
        std::fs::remove_file(p)?;
    }
    Ok((frequent, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Vocabulary;
    use proptest::prelude::*;

    fn docs(texts: &[&str]) -> Vec<Result<Document>> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Ok(Document::new(i.to_string(), *t)))
            .collect()
    }

    fn tokenizer_for(texts: &[&str]) -> Tokenizer {
        Tokenizer::Whitespace(Vocabulary::build(docs(texts)).unwrap())
    }

    #[test]
    fn windows() {
        let w: Vec<_> = ngram_windows(&[7, 8, 9, 10], 2).collect();
        assert_eq!(w, vec![&[7, 8][..], &[8, 9], &[9, 10]]);
        assert_eq!(ngram_windows(&[7, 8], 3).count(), 0);
        let r: Vec<_> = ngram_windows(&[5, 5, 5], 2).collect();
        assert_eq!(r, vec![&[5, 5][..], &[5, 5]]);
    }

    #[test]
    fn keys_are_little_endian() {
        assert_eq!(canonical_key(&[1]), vec![1, 0, 0, 0]);
        assert_eq!(canonical_key(&[1, 2]), vec![1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(canonical_key(&[0]), vec![0; 4]);
        assert_eq!(canonical_key(&[0x0403_0201]), vec![1, 2, 3, 4]);
    }

    #[test]
    fn wide_ids_rejected() {
        assert!(canonical_key_wide(&[1 << 32]).is_err());
        assert_eq!(canonical_key_wide(&[1, 2]).unwrap(), canonical_key(&[1, 2]));
    }

    #[test]
    fn counting_examples() {
        let tok = tokenizer_for(&["a b"]);
        let c = count_ngrams(docs(&["a b a b"]), 2, &tok).unwrap();
        assert_eq!(c.count(&[1, 2]), 2);
        assert_eq!(c.count(&[2, 1]), 1);
        assert_eq!(c.distinct(), 2);
        assert_eq!(c.total_windows, 3);

        let empty = count_ngrams(docs(&[]), 2, &tok).unwrap();
        assert_eq!(empty.distinct(), 0);
        assert_eq!(empty.total_windows, 0);

        let split = count_ngrams(docs(&["a b", "b a"]), 2, &tok).unwrap();
        assert_eq!(split.count(&[1, 2]), 1);
        assert_eq!(split.count(&[2, 1]), 1);
        assert_eq!(split.total_windows, 2);
    }

    #[test]
    fn selection_is_inclusive() {
        let mut c = NGramCounts::new(1);
        c.counts.insert(canonical_key(&[1]), 10);
        c.counts.insert(canonical_key(&[2]), 9);
        let sel = select_frequent(&c, 10);
        assert_eq!(sel.into_iter().collect::<Vec<_>>(), vec![canonical_key(&[1])]);
        assert_eq!(select_frequent(&c, 1).len(), 2);
        assert!(select_frequent(&NGramCounts::new(3), 1).is_empty());
    }

    #[test]
    fn dump_round_trip() {
        let tok = tokenizer_for(&["a b c d e"]);
        let c = count_ngrams(docs(&["a b c d e a b c", "c d e"]), 3, &tok).unwrap();
        let mut buf = Vec::new();
        c.write_dump(&mut buf).unwrap();
        let back = NGramCounts::read_dump(buf.as_slice(), 3).unwrap();
        assert_eq!(back, c);
        // truncated record
        assert!(NGramCounts::read_dump(&buf[..buf.len() - 3], 3).is_err());
    }

    #[test]
    fn sharded_matches_in_memory() {
        let texts = ["a b c a b c a b", "b c a b c", "c c c c c c", "a b"];
        let tok = tokenizer_for(&texts);
        let dir = tempfile::tempdir().unwrap();
        for min in 1..4 {
            let exact = select_frequent(&count_ngrams(docs(&texts), 3, &tok).unwrap(), min);
            let (sharded, total) =
                frequent_ngrams_sharded(docs(&texts), 3, &tok, min, 3, dir.path()).unwrap();
            assert_eq!(sharded, exact);
            assert_eq!(total, 6 + 3 + 4);
        }
    }

    proptest! {
        #[test]
        fn key_injective(a in proptest::collection::vec(any::<u32>(), 1..6),
                         b in proptest::collection::vec(any::<u32>(), 1..6)) {
            prop_assume!(a.len() == b.len() && a != b);
            prop_assert_ne!(canonical_key(&a), canonical_key(&b));
            prop_assert_eq!(decode_key(&canonical_key(&a)).unwrap(), a);
        }

        #[test]
        fn totals_match_window_arithmetic(
            seqs in proptest::collection::vec(proptest::collection::vec(0u32..4, 0..12), 0..6),
            n in 1usize..5,
        ) {
            let mut c = NGramCounts::new(n);
            for s in &seqs {
                c.add_document(s);
            }
            let expected: u64 = seqs.iter().map(|s| (s.len() + 1).saturating_sub(n) as u64).sum();
            prop_assert_eq!(c.total_windows, expected);
            prop_assert_eq!(c.counts.values().sum::<u64>(), expected);
            prop_assert_eq!(select_frequent(&c, 1).len(), c.distinct());
        }
    }
}
