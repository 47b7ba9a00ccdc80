//! BLEU, normalized edit similarity and the approximate-memorization label.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::bloom::NGramMembership;
use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, Tokenizer};

/// BLEU strictly above this marks a continuation as approximately memorized.
pub const APPROX_MEMORIZATION_THRESHOLD: f64 = 0.75;

const MAX_ORDER: usize = 4;

fn ngram_counts<'a>(words: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut out = HashMap::new();
    for w in words.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}

/// Clipped n-gram matches and candidate n-gram total.
pub fn modified_precision(candidate: &[&str], reference: &[&str], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

/// Sentence BLEU over 1- to 4-grams with uniform weights and the usual
/// brevity penalty. No smoothing: any zero precision gives 0.
pub fn bleu(candidate: &[&str], reference: &[&str]) -> Result<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::domain("BLEU needs non-empty candidate and reference"));
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_ORDER {
        let (matched, total) = modified_precision(candidate, reference, n);
        if matched == 0 || total == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln() / MAX_ORDER as f64;
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let brevity = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    Ok((brevity * log_sum.exp()).min(1.0))
}

pub fn bleu_text(candidate: &str, reference: &str) -> Result<f64> {
    let c: Vec<&str> = candidate.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    bleu(&c, &r)
}

/// Character-level Levenshtein distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.len() < b.len() {
        return levenshtein(b, a);
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn edit_distance(x: &str, y: &str) -> usize {
    let a: Vec<char> = x.chars().collect();
    let b: Vec<char> = y.chars().collect();
    levenshtein(&a, &b)
}

/// `1 - distance / max(|x|, |y|)` over characters; two empty strings are
/// identical.
pub fn edit_similarity(x: &str, y: &str) -> f64 {
    let a: Vec<char> = x.chars().collect();
    let b: Vec<char> = y.chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / longest as f64
}

pub fn is_approx_memorized(bleu: f64, threshold: f64) -> bool {
    bleu > threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub bleu: f64,
    pub edit_similarity: f64,
    pub verbatim_ngram_hits: usize,
    pub approx_memorized: bool,
    /// Generation equals the ground truth token for token.
    pub verbatim_memorized: bool,
}

/// Scores generations against ground truth.
pub struct Classifier<'a> {
    pub tokenizer: &'a Tokenizer,
    pub membership: Option<&'a dyn NGramMembership>,
    pub threshold: f64,
}

impl<'a> Classifier<'a> {
    pub fn new(tokenizer: &'a Tokenizer) -> Self {
        Classifier {
            tokenizer,
            membership: None,
            threshold: APPROX_MEMORIZATION_THRESHOLD,
        }
    }

    pub fn with_membership(mut self, membership: &'a dyn NGramMembership) -> Self {
        self.membership = Some(membership);
        self
    }

    /// An empty generation scores BLEU 0; an empty ground truth is an error.
    pub fn classify(&self, generation: &[TokenId], truth: &[TokenId]) -> Result<SimilarityReport> {
        let gen_text = self.tokenizer.detokenize(generation)?;
        let truth_text = self.tokenizer.detokenize(truth)?;
        let gen_words: Vec<&str> = gen_text.split_whitespace().collect();
        let truth_words: Vec<&str> = truth_text.split_whitespace().collect();
        if truth_words.is_empty() {
            return Err(Error::domain("ground truth has no words"));
        }
        let bleu = if gen_words.is_empty() {
            0.0
        } else {
            bleu(&gen_words, &truth_words)?
        };
        let verbatim_ngram_hits = self.membership.map_or(0, |m| {
            generation
                .windows(m.ngram_len())
                .filter(|w| m.contains_ngram(w))
                .count()
        });
        Ok(SimilarityReport {
            bleu,
            edit_similarity: edit_similarity(&gen_text, &truth_text),
            verbatim_ngram_hits,
            approx_memorized: is_approx_memorized(bleu, self.threshold),
            verbatim_memorized: generation == truth,
        })
    }
}
