//! Document streaming and evaluation-set construction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, Tokenizer};

pub const DEFAULT_PREFIX_LEN: usize = 50;
pub const DEFAULT_TARGET_LEN: usize = 50;
pub const DEFAULT_SAMPLE_LEN: usize = 150;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<serde_json::Value>,
    text: Option<String>,
}

/// Iterator over the documents of one file.
pub enum DocumentStream {
    Records {
        lines: std::io::Lines<BufReader<File>>,
        line_no: usize,
    },
    Single(Option<Document>),
}

impl Iterator for DocumentStream {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        match self {
            DocumentStream::Single(doc) => doc.take().map(Ok),
            DocumentStream::Records { lines, line_no } => loop {
                let line = match lines.next()? {
                    Ok(line) => line,
                    Err(e) => return Some(Err(e.into())),
                };
                *line_no += 1;
                if line.trim().is_empty() {
                    continue;
                }
                return Some(parse_record(&line, *line_no));
            },
        }
    }
}

fn parse_record(line: &str, line_no: usize) -> Result<Document> {
    let record_err = |message: String| Error::Record {
        line: line_no,
        message,
    };
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| record_err(e.to_string()))?;
    let text = raw.text.ok_or_else(|| record_err("missing `text` field".into()))?;
    let id = match raw.id {
        Some(serde_json::Value::String(s)) => s,
        Some(serde_json::Value::Number(n)) => n.to_string(),
        Some(_) => return Err(record_err("`id` must be a string or number".into())),
        None => return Err(record_err("missing `id` field".into())),
    };
    Ok(Document { id, text })
}

/// Files ending in `.jsonl`/`.ndjson` are read as one JSON record
/// (`{"id": .., "text": ..}`) per line; anything else is a single
/// document whose id is the file name.
pub fn stream_documents(path: &Path) -> Result<DocumentStream> {
    if is_record_file(path) {
        let file = File::open(path)?;
        Ok(DocumentStream::Records {
            lines: BufReader::new(file).lines(),
            line_no: 0,
        })
    } else {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        if text.is_empty() {
            return Ok(DocumentStream::Single(None));
        }
        let id = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(DocumentStream::Single(Some(Document { id, text })))
    }
}

fn is_record_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson")
    )
}

pub fn write_documents(path: &Path, docs: &[Document]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for doc in docs {
        serde_json::to_writer(&mut out, doc).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Bucket index `i` with `2^(i/4) <= count < 2^((i+1)/4)`.
///
/// Equivalent to the largest `i` with `2^i <= count^4`, which is evaluated
/// exactly in integer arithmetic for counts below 2^32.
pub fn assign_bucket(count: u64) -> Result<u32> {
    if count < 1 {
        return Err(Error::domain("duplicate count must be at least 1"));
    }
    if count < (1 << 32) {
        let c = u128::from(count);
        let fourth = c * c * c * c;
        return Ok(fourth.ilog2());
    }
    // Drop low bits in pairs of whole powers of two; each dropped bit shifts
    // the bucket by exactly 4. Exact unless `count` sits within a relative
    // 2^-31 of an irrational boundary.
    let shift = count.ilog2() - 31;
    Ok(4 * shift + assign_bucket(count >> shift)?)
}

/// Reports how many times a token string occurs in the corpus.
pub trait DuplicateOracle {
    fn occurrences(&self, tokens: &[TokenId]) -> u64;
}

/// Exact occurrence counts for a fixed set of candidate strings, counted as
/// (possibly overlapping) substrings of the corpus documents.
#[derive(Debug, Default, Clone)]
pub struct SubstringCounts {
    by_len: BTreeMap<usize, HashMap<Vec<TokenId>, u64>>,
}

impl SubstringCounts {
    pub fn count<'a, I>(candidates: &[Vec<TokenId>], corpus: I) -> Self
    where
        I: IntoIterator<Item = &'a [TokenId]>,
    {
        let mut by_len: BTreeMap<usize, HashMap<Vec<TokenId>, u64>> = BTreeMap::new();
        for c in candidates.iter().filter(|c| !c.is_empty()) {
            by_len.entry(c.len()).or_default().insert(c.clone(), 0);
        }
        for doc in corpus {
            for (&len, table) in by_len.iter_mut() {
                for window in doc.windows(len) {
                    if let Some(n) = table.get_mut(window) {
                        *n += 1;
                    }
                }
            }
        }
        SubstringCounts { by_len }
    }
}

impl DuplicateOracle for SubstringCounts {
    fn occurrences(&self, tokens: &[TokenId]) -> u64 {
        self.by_len
            .get(&tokens.len())
            .and_then(|t| t.get(tokens))
            .copied()
            .unwrap_or(0)
    }
}

impl<F: Fn(&[TokenId]) -> u64> DuplicateOracle for F {
    fn occurrences(&self, tokens: &[TokenId]) -> u64 {
        self(tokens)
    }
}

/// A candidate string drawn from one document: its leading tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledString {
    pub id: String,
    pub tokens: Vec<TokenId>,
}

/// Takes the first `sample_len` tokens of every document, dropping exact
/// repeats (a duplicated document yields one sample).
pub fn sample_strings<I>(docs: I, tokenizer: &Tokenizer, sample_len: usize) -> Result<Vec<SampledString>>
where
    I: IntoIterator<Item = Result<Document>>,
{
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for doc in docs {
        let doc = doc?;
        let mut tokens = tokenizer.tokenize(&doc.text);
        tokens.truncate(sample_len);
        if seen.insert(tokens.clone()) {
            out.push(SampledString { id: doc.id, tokens });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalExample {
    pub id: String,
    #[serde(rename = "prompt_tokens")]
    pub prompt: Vec<TokenId>,
    #[serde(rename = "truth_tokens")]
    pub ground_truth: Vec<TokenId>,
    pub duplicate_count: u64,
    pub bucket: u32,
}

/// Splits each sample into a `prefix_len` prompt and the following
/// `target_len` tokens. Samples that are too short are skipped.
pub fn make_eval_examples(
    samples: &[SampledString],
    oracle: &dyn DuplicateOracle,
    prefix_len: usize,
    target_len: usize,
) -> Result<Vec<EvalExample>> {
    if prefix_len == 0 || target_len == 0 {
        return Err(Error::domain("prefix_len and target_len must be positive"));
    }
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        if s.tokens.len() < prefix_len + target_len {
            warn!(
                "skipping `{}`: {} tokens, need {}",
                s.id,
                s.tokens.len(),
                prefix_len + target_len
            );
            continue;
        }
        let duplicate_count = oracle.occurrences(&s.tokens);
        let bucket = assign_bucket(duplicate_count).map_err(|_| {
            Error::domain(format!("sample `{}` does not occur in the corpus", s.id))
        })?;
        out.push(EvalExample {
            id: s.id.clone(),
            prompt: s.tokens[..prefix_len].to_vec(),
            ground_truth: s.tokens[prefix_len..prefix_len + target_len].to_vec(),
            duplicate_count,
            bucket,
        });
    }
    Ok(out)
}

pub fn write_eval_examples(path: &Path, examples: &[EvalExample]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut out, ex).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_eval_examples(path: &Path) -> Result<Vec<EvalExample>> {
    read_records(path)
}

pub(crate) fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Whole-sequence substring lookup over a tokenized corpus.
#[derive(Debug, Default, Clone)]
pub struct CorpusIndex {
    docs: Vec<Vec<TokenId>>,
    starts: HashMap<TokenId, Vec<(u32, u32)>>,
}

impl CorpusIndex {
    pub fn new(docs: Vec<Vec<TokenId>>) -> Self {
        let mut starts: HashMap<TokenId, Vec<(u32, u32)>> = HashMap::new();
        for (d, doc) in docs.iter().enumerate() {
            for (p, &t) in doc.iter().enumerate() {
                starts.entry(t).or_default().push((d as u32, p as u32));
            }
        }
        CorpusIndex { docs, starts }
    }

    /// True when `seq` occurs verbatim inside a single document.
    pub fn contains_sequence(&self, seq: &[TokenId]) -> bool {
        let Some(&first) = seq.first() else {
            return true;
        };
        self.starts.get(&first).is_some_and(|hits| {
            hits.iter().any(|&(d, p)| {
                self.docs[d as usize]
                    .get(p as usize..p as usize + seq.len())
                    .is_some_and(|w| w == seq)
            })
        })
    }

    pub fn docs(&self) -> &[Vec<TokenId>] {
        &self.docs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bucket_by_scan(count: u64) -> u32 {
        let c = count as f64;
        let mut i = 0u32;
        while 2f64.powf(f64::from(i + 1) / 4.0) <= c {
            i += 1;
        }
        assert!(2f64.powf(f64::from(i) / 4.0) <= c);
        i
    }

    #[test]
    fn bucket_examples() {
        assert_eq!(assign_bucket(1).unwrap(), 0);
        assert_eq!(assign_bucket(2).unwrap(), 4);
        assert_eq!(assign_bucket(5).unwrap(), 9);
        assert_eq!(assign_bucket(16).unwrap(), 16);
        assert!(assign_bucket(0).is_err());
    }

    #[test]
    fn bucket_matches_scan_exhaustively() {
        let mut prev = 0;
        for c in 1..=1_000_000u64 {
            let b = assign_bucket(c).unwrap();
            assert!(b >= prev);
            prev = b;
            if c <= 20_000 || c % 97 == 0 {
                assert_eq!(b, bucket_by_scan(c), "count {c}");
            }
        }
    }

    #[test]
    fn bucket_large_counts() {
        assert_eq!(assign_bucket(1 << 40).unwrap(), 160);
        assert_eq!(assign_bucket(u64::MAX).unwrap(), 255);
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn streams_records_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "c.jsonl",
            "{\"id\":\"a\",\"text\":\"one\"}\n\n{\"id\":7,\"text\":\"two\"}\n",
        );
        let docs: Vec<_> = stream_documents(&p).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(docs, vec![Document::new("a", "one"), Document::new("7", "two")]);

        let empty = write(&dir, "e.jsonl", "");
        assert_eq!(stream_documents(&empty).unwrap().count(), 0);
    }

    #[test]
    fn missing_text_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.jsonl", "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\"}\n");
        let res: Result<Vec<_>> = stream_documents(&p).unwrap().collect();
        assert!(matches!(res, Err(Error::Record { line: 2, .. })));
    }

    #[test]
    fn plain_text_is_one_document() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "book.txt", "line one\nline two\n");
        let docs: Vec<_> = stream_documents(&p).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(docs, vec![Document::new("book.txt", "line one\nline two\n")]);
        let empty = write(&dir, "empty.txt", "");
        assert_eq!(stream_documents(&empty).unwrap().count(), 0);
    }

    #[test]
    fn split_150_token_string() {
        let tokens: Vec<TokenId> = (1..=150).collect();
        let samples = vec![SampledString { id: "s".into(), tokens: tokens.clone() }];
        let ex = make_eval_examples(&samples, &|_: &[TokenId]| 1u64, 50, 50).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].prompt, tokens[..50]);
        assert_eq!(ex[0].ground_truth, tokens[50..100]);
        assert_eq!(ex[0].bucket, 0);

        let ex5 = make_eval_examples(&samples, &|_: &[TokenId]| 5u64, 50, 50).unwrap();
        assert_eq!(ex5[0].bucket, 9);
    }

    #[test]
    fn short_samples_are_skipped() {
        let samples = vec![
            SampledString { id: "short".into(), tokens: vec![1; 10] },
            SampledString { id: "ok".into(), tokens: vec![1; 100] },
        ];
        let ex = make_eval_examples(&samples, &|_: &[TokenId]| 3u64, 50, 50).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].id, "ok");
    }

    #[test]
    fn substring_counts_overlapping() {
        let corpus: Vec<Vec<TokenId>> = vec![vec![1, 2, 1, 2, 1], vec![2, 1, 2], vec![1]];
        let counts = SubstringCounts::count(
            &[vec![1, 2, 1], vec![2], vec![9, 9]],
            corpus.iter().map(Vec::as_slice),
        );
        assert_eq!(counts.occurrences(&[1, 2, 1]), 2);
        assert_eq!(counts.occurrences(&[2]), 4);
        assert_eq!(counts.occurrences(&[9, 9]), 0);
        assert_eq!(counts.occurrences(&[4]), 0);
    }

    #[test]
    fn corpus_index_lookup() {
        let idx = CorpusIndex::new(vec![vec![1, 2, 3, 4], vec![5, 6]]);
        assert!(idx.contains_sequence(&[2, 3]));
        assert!(idx.contains_sequence(&[5, 6]));
        assert!(!idx.contains_sequence(&[4, 5]));
        assert!(!idx.contains_sequence(&[3, 4, 5]));
    }

    proptest! {
        #[test]
        fn bucket_bounds_hold(c in 1u64..u32::MAX as u64) {
            let b = assign_bucket(c).unwrap();
            let c4 = (c as u128).pow(4);
            prop_assert!(1u128 << b <= c4);
            prop_assert!(1u128.checked_shl(b + 1).is_none_or(|x| x > c4));
        }

        #[test]
        fn prompt_and_truth_prefix_source(
            tokens in proptest::collection::vec(0u32..50, 0..200),
            prefix in 1usize..60,
            target in 1usize..60,
        ) {
            let samples = vec![SampledString { id: "x".into(), tokens: tokens.clone() }];
            let ex = make_eval_examples(&samples, &|_: &[TokenId]| 2u64, prefix, target).unwrap();
            if tokens.len() >= prefix + target {
                let joined: Vec<_> = ex[0].prompt.iter().chain(&ex[0].ground_truth).copied().collect();
                prop_assert!(tokens.starts_with(&joined));
            } else {
                prop_assert!(ex.is_empty());
            }
        }
    }
}
