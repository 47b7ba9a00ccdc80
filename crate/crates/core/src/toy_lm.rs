//! Count-based back-off language model.
//!
//! The model keeps next-token counts for every context of length
//! `0..=order` seen in training. Scoring starts from the longest suffix of
//! the context that was seen: tokens observed after that suffix score
//! `count / total`, exactly proportional to their counts. Every other token
//! gets the score it would receive from the next shorter seen suffix,
//! scaled by `0.5 / total`, applied recursively down to unigram counts. The
//! scale keeps all backed-off scores strictly below the smallest
//! longest-suffix score, so the ranking of observed continuations (and the
//! argmax) is exactly that of the longest suffix alone, while tokens the
//! longest suffix never saw are still ordered by shorter-context evidence.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::corpus::Document;
use crate::decoding::LanguageModel;
use crate::error::{Error, Result};
use crate::ngram::{canonical_key, decode_key, read_count_records, write_count_records};
use crate::tokenizer::{TokenId, Tokenizer};

const BACKOFF_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct NextCounts {
    total: u64,
    /// Sorted by token id.
    next: Vec<(TokenId, u64)>,
}

impl NextCounts {
    fn add(&mut self, token: TokenId, by: u64) {
        self.total += by;
        match self.next.binary_search_by_key(&token, |&(t, _)| t) {
            Ok(i) => self.next[i].1 += by,
            Err(i) => self.next.insert(i, (token, by)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyLm {
    order: usize,
    vocab_size: usize,
    unigram: Vec<u64>,
    unigram_total: u64,
    /// `tables[l - 1]` holds contexts of length `l`.
    tables: Vec<HashMap<Box<[TokenId]>, NextCounts>>,
}

impl ToyLm {
    pub fn train<'a, I>(docs: I, order: usize, vocab_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [TokenId]>,
    {
        if order < 1 {
            return Err(Error::domain("model order must be at least 1"));
        }
        let mut lm = ToyLm {
            order,
            vocab_size,
            unigram: vec![0; vocab_size],
            unigram_total: 0,
            tables: vec![HashMap::new(); order],
        };
        for doc in docs {
            lm.add_document(doc)?;
        }
        if lm.unigram_total == 0 {
            return Err(Error::domain("cannot train on an empty corpus"));
        }
        Ok(lm)
    }

    pub fn train_documents<I>(docs: I, tokenizer: &Tokenizer, order: usize) -> Result<Self>
    where
        I: IntoIterator<Item = Result<Document>>,
    {
        let tokenized = docs
            .into_iter()
            .map(|d| d.map(|d| tokenizer.tokenize(&d.text)))
            .collect::<Result<Vec<_>>>()?;
        Self::train(tokenized.iter().map(Vec::as_slice), order, tokenizer.vocab_size())
    }

    fn add_document(&mut self, doc: &[TokenId]) -> Result<()> {
        for (i, &t) in doc.iter().enumerate() {
            if t as usize >= self.vocab_size {
                return Err(Error::InvalidToken(t));
            }
            self.unigram[t as usize] += 1;
            self.unigram_total += 1;
            for len in 1..=self.order.min(i) {
                let ctx = &doc[i - len..i];
                let table = &mut self.tables[len - 1];
                match table.get_mut(ctx) {
                    Some(c) => c.add(t, 1),
                    None => {
                        let mut c = NextCounts::default();
                        c.add(t, 1);
                        table.insert(ctx.into(), c);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Length of the longest context suffix seen in training.
    pub fn matched_suffix_len(&self, context: &[TokenId]) -> usize {
        (1..=self.order.min(context.len()))
            .rev()
            .find(|&l| self.tables[l - 1].contains_key(&context[context.len() - l..]))
            .unwrap_or(0)
    }

    /// Counts observed after `context` (exact length-match), or unigram
    /// counts for the empty context.
    pub fn continuation_counts(&self, context: &[TokenId]) -> Vec<(TokenId, u64)> {
        if context.is_empty() {
            return self
                .unigram
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(t, &c)| (t as TokenId, c))
                .collect();
        }
        self.tables
            .get(context.len() - 1)
            .and_then(|t| t.get(context))
            .map(|c| c.next.clone())
            .unwrap_or_default()
    }

    pub fn scores(&self, context: &[TokenId]) -> Vec<f64> {
        let total = self.unigram_total as f64;
        let mut scores: Vec<f64> = self.unigram.iter().map(|&c| c as f64 / total).collect();
        for len in 1..=self.order.min(context.len()) {
            let Some(counts) = self.tables[len - 1].get(&context[context.len() - len..]) else {
                continue;
            };
            let total = counts.total as f64;
            let scale = BACKOFF_SCALE / total;
            for s in scores.iter_mut() {
                *s *= scale;
            }
            for &(t, c) in &counts.next {
                scores[t as usize] = c as f64 / total;
            }
        }
        scores
    }

    /// Record dump in the n-gram counts format. A zero-length key carries
    /// `order << 32 | vocab_size`; every other key is the canonical key of
    /// `context ++ [next]`.
    pub fn write_dump<W: Write>(&self, out: W) -> Result<()> {
        let header = ((self.order as u64) << 32) | self.vocab_size as u64;
        let mut records: Vec<(Vec<u8>, u64)> = vec![(Vec::new(), header)];
        for (t, &c) in self.unigram.iter().enumerate() {
            if c > 0 {
                records.push((canonical_key(&[t as TokenId]), c));
            }
        }
        for table in &self.tables {
            let mut rows: Vec<_> = table.iter().collect();
            rows.sort_by(|a, b| a.0.cmp(b.0));
            for (ctx, counts) in rows {
                for &(t, c) in &counts.next {
                    let mut gram = ctx.to_vec();
                    gram.push(t);
                    records.push((canonical_key(&gram), c));
                }
            }
        }
        write_count_records(out, records.iter().map(|(k, c)| (k.as_slice(), *c)))
    }

    pub fn read_dump<R: Read>(input: R) -> Result<Self> {
        let records = read_count_records(input)?;
        let mut iter = records.into_iter();
        let header = match iter.next() {
            Some((k, h)) if k.is_empty() => h,
            _ => return Err(Error::domain("model dump is missing its header record")),
        };
        let order = (header >> 32) as usize;
        let vocab_size = (header & 0xFFFF_FFFF) as usize;
        if order < 1 {
            return Err(Error::domain("model dump has order 0"));
        }
        let mut lm = ToyLm {
            order,
            vocab_size,
            unigram: vec![0; vocab_size],
            unigram_total: 0,
            tables: vec![HashMap::new(); order],
        };
        for (key, count) in iter {
            let gram = decode_key(&key).ok_or_else(|| Error::domain("bad key in model dump"))?;
            let (&t, ctx) = gram
                .split_last()
                .ok_or_else(|| Error::domain("bad key in model dump"))?;
            if t as usize >= vocab_size || ctx.len() > order {
                return Err(Error::domain("model dump entry out of range"));
            }
            if ctx.is_empty() {
                lm.unigram[t as usize] += count;
                lm.unigram_total += count;
            } else {
                lm.tables[ctx.len() - 1]
                    .entry(ctx.into())
                    .or_default()
                    .add(t, count);
            }
        }
        if lm.unigram_total == 0 {
            return Err(Error::domain("model dump has no unigram counts"));
        }
        Ok(lm)
    }
}

impl LanguageModel for ToyLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_scores(&self, context: &[TokenId]) -> Vec<f64> {
        self.scores(context)
    }
}
