//! End-to-end experiment plumbing shared by the CLI and the test suites.

pub mod canary;
pub mod config;
mod report;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloom::{ExactNGramSet, FilterBuilder, FilterParams, NGramFilter, NGramMembership};
use crate::corpus::{
    make_eval_examples, sample_strings, Document, EvalExample, SampledString, SubstringCounts,
};
use crate::decoding::{
    derive_seed, memfree_generate, unconstrained_generate, GenerationTrace, LanguageModel,
    SamplerSpec,
};
use crate::error::Result;
use crate::ngram::{count_ngrams, select_frequent};
use crate::style::{self, StyleKind};
use crate::tokenizer::{TokenId, Tokenizer};

pub use config::ExperimentConfig;
pub use report::{
    evaluate, overlap, read_traces, trace_stats, write_records, write_traces, BucketSummary, EvalReport,
    EvalSummary, OverlapRow, PairReport, TraceStats,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub n: usize,
    pub min_count: u64,
    pub fp: f64,
    pub total_windows: u64,
    pub distinct_ngrams: usize,
    /// N: keys meeting the threshold.
    pub inserted: u64,
    pub m_bits: u64,
    pub k: u32,
    /// Fraction of bits set.
    pub load: f64,
    pub effective_fp: f64,
}

/// The stored n-gram keys for a corpus: every window occurring at least
/// `min_count` times.
pub fn frequent_keys(
    docs: &[Document],
    tokenizer: &Tokenizer,
    n: usize,
    min_count: u64,
) -> Result<(BTreeSet<Vec<u8>>, u64, usize)> {
    let counts = count_ngrams(docs.iter().cloned().map(Ok), n, tokenizer)?;
    Ok((
        select_frequent(&counts, min_count),
        counts.total_windows,
        counts.distinct(),
    ))
}

/// Count, threshold, size, insert, seal.
pub fn build_filter(
    docs: &[Document],
    tokenizer: &Tokenizer,
    n: usize,
    min_count: u64,
    fp: f64,
) -> Result<(NGramFilter, BuildSummary)> {
    let (keys, total_windows, distinct) = frequent_keys(docs, tokenizer, n, min_count)?;
    filter_from_keys(&keys, n, min_count, fp, total_windows, distinct)
}

pub fn filter_from_keys(
    keys: &BTreeSet<Vec<u8>>,
    n: usize,
    min_count: u64,
    fp: f64,
    total_windows: u64,
    distinct_ngrams: usize,
) -> Result<(NGramFilter, BuildSummary)> {
    let params = FilterParams::new((keys.len() as u64).max(1), fp, n, min_count)?;
    let mut builder = FilterBuilder::new(params);
    for k in keys {
        builder.insert(k);
    }
    let filter = builder.seal();
    let summary = BuildSummary {
        n,
        min_count,
        fp,
        total_windows,
        distinct_ngrams,
        inserted: filter.inserted(),
        m_bits: params.m_bits,
        k: params.k,
        load: filter.load(),
        effective_fp: filter.effective_fp(),
    };
    Ok((filter, summary))
}

pub fn build_exact_set(
    docs: &[Document],
    tokenizer: &Tokenizer,
    n: usize,
    min_count: u64,
) -> Result<ExactNGramSet> {
    let (keys, _, _) = frequent_keys(docs, tokenizer, n, min_count)?;
    Ok(ExactNGramSet::from_keys(n, &keys))
}

/// Evaluation examples for the prompt documents, with duplicate counts
/// measured against the training corpus.
pub fn prepare_examples(
    prompt_docs: &[Document],
    corpus: &[Document],
    tokenizer: &Tokenizer,
    cfg: &ExperimentConfig,
) -> Result<Vec<EvalExample>> {
    let samples: Vec<SampledString> =
        sample_strings(prompt_docs.iter().cloned().map(Ok), tokenizer, cfg.sample_len)?;
    let candidates: Vec<Vec<TokenId>> = samples.iter().map(|s| s.tokens.clone()).collect();
    let tokenized: Vec<Vec<TokenId>> = corpus.iter().map(|d| tokenizer.tokenize(&d.text)).collect();
    let counts = SubstringCounts::count(&candidates, tokenized.iter().map(Vec::as_slice));
    let examples = make_eval_examples(&samples, &counts, cfg.prefix_len, cfg.target_len)?;
    Ok(examples
        .into_iter()
        .filter(|e| e.duplicate_count >= cfg.min_duplicates)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Undefended,
    Defended,
}

/// One generation, as written to the traces file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub example_id: String,
    pub mode: Mode,
    #[serde(default)]
    pub style: StyleKind,
    pub seed: u64,
    pub prompt: Vec<TokenId>,
    #[serde(flatten)]
    pub trace: GenerationTrace,
}

pub fn styled_prompt(
    prompt: &[TokenId],
    kind: StyleKind,
    tokenizer: &Tokenizer,
) -> Result<Vec<TokenId>> {
    if kind == StyleKind::Original {
        return Ok(prompt.to_vec());
    }
    Ok(tokenizer.tokenize(&style::apply(&tokenizer.detokenize(prompt)?, kind)))
}

/// Undefended and defended generation for every example and style, with a
/// per-example seed shared by both runs. Output order is
/// `(example, style, [undefended, defended])` regardless of thread count.
pub fn generate_pairs(
    lm: &dyn LanguageModel,
    filter: &dyn NGramMembership,
    examples: &[EvalExample],
    tokenizer: &Tokenizer,
    cfg: &ExperimentConfig,
) -> Result<Vec<TraceRecord>> {
    let jobs: Vec<(usize, &EvalExample, StyleKind)> = examples
        .iter()
        .enumerate()
        .flat_map(|(i, e)| cfg.styles.iter().map(move |&s| (i, e, s)))
        .collect();
    let base = cfg.sampler_spec();
    let per_job: Vec<Result<[TraceRecord; 2]>> = jobs
        .par_iter()
        .map(|&(i, ex, kind)| {
            let prompt = styled_prompt(&ex.prompt, kind, tokenizer)?;
            let seed = derive_seed(base.seed, i as u64);
            let spec = SamplerSpec { seed, ..base };
            let undefended = unconstrained_generate(lm, &prompt, cfg.steps, &spec);
            let defended = memfree_generate(lm, &prompt, cfg.steps, filter, &spec);
            let record = |mode, trace| TraceRecord {
                example_id: ex.id.clone(),
                mode,
                style: kind,
                seed,
                prompt: prompt.clone(),
                trace,
            };
            Ok([record(Mode::Undefended, undefended), record(Mode::Defended, defended)])
        })
        .collect();
    let mut out = Vec::with_capacity(per_job.len() * 2);
    for pair in per_job {
        out.extend(pair?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowVerdict {
    pub start: usize,
    pub ngram: Vec<TokenId>,
    pub hit: bool,
}

pub fn check_windows(tokens: &[TokenId], membership: &dyn NGramMembership) -> Vec<WindowVerdict> {
    tokens
        .windows(membership.ngram_len())
        .enumerate()
        .map(|(start, w)| WindowVerdict {
            start,
            ngram: w.to_vec(),
            hit: membership.contains_ngram(w),
        })
        .collect()
}

/// Windows of `prompt ++ output` that include at least one generated token
/// and are stored. MemFree output must have none.
pub fn filtered_windows(
    prompt: &[TokenId],
    output: &[TokenId],
    membership: &dyn NGramMembership,
) -> usize {
    let n = membership.ngram_len();
    let joined: Vec<TokenId> = prompt.iter().chain(output).copied().collect();
    joined
        .windows(n)
        .enumerate()
        .filter(|(start, w)| start + n > prompt.len() && membership.contains_ngram(w))
        .count()
}
