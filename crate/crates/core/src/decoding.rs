//! MemFree decoding and the baselines it is compared against.
//!
//! At every step the candidate tokens are ranked by score and probed against
//! the n-gram membership structure in rank order. A candidate is excluded
//! when the window made of the last `n - 1` context tokens followed by the
//! candidate is stored. Probing stops as soon as enough non-members are found
//! for the sampler (one for argmax, `k` for top-k), which gives exactly the
//! same choice as masking the whole vocabulary first.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bloom::NGramMembership;
use crate::corpus::CorpusIndex;
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

/// Score given to tokens removed by the filter. Samplers treat it as
/// probability zero.
pub const EXCLUDED: f64 = f64::NEG_INFINITY;

/// Next-token scorer. Scores are finite, non-negative weights (higher means
/// more likely); top-k samples proportionally to them.
pub trait LanguageModel: Sync {
    fn vocab_size(&self) -> usize;
    fn next_scores(&self, context: &[TokenId]) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SamplerKind {
    Argmax,
    TopK { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerSpec {
    #[serde(flatten)]
    pub kind: SamplerKind,
    pub seed: u64,
}

impl SamplerSpec {
    pub fn argmax() -> Self {
        SamplerSpec {
            kind: SamplerKind::Argmax,
            seed: 0,
        }
    }

    pub fn top_k(k: usize, seed: u64) -> Self {
        SamplerSpec {
            kind: SamplerKind::TopK { k: k.max(1) },
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        SamplerSpec { seed, ..self }
    }

    fn width(&self) -> usize {
        match self.kind {
            SamplerKind::Argmax => 1,
            SamplerKind::TopK { k } => k.max(1),
        }
    }

    fn is_stochastic(&self) -> bool {
        matches!(self.kind, SamplerKind::TopK { k } if k > 1)
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplerKind::Argmax => f.write_str("argmax"),
            SamplerKind::TopK { k } => write!(f, "top-k({k})"),
        }
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    /// `argmax`, or `top-k` / `top_k` optionally followed by `:K`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, k) = match s.split_once(':') {
            Some((n, k)) => (n, Some(k)),
            None => (s, None),
        };
        match (name, k) {
            ("argmax" | "greedy", None) => Ok(SamplerKind::Argmax),
            ("top-k" | "top_k" | "topk", k) => {
                let k = match k {
                    Some(k) => k
                        .parse()
                        .map_err(|_| Error::Config(format!("bad top-k width `{k}`")))?,
                    None => 40,
                };
                if k == 0 {
                    return Err(Error::Config("top-k width must be positive".into()));
                }
                Ok(SamplerKind::TopK { k })
            }
            _ => Err(Error::Config(format!("unknown sampler `{s}`"))),
        }
    }
}

/// SplitMix64 finalizer over `base ^ stream`, for per-example seeds that do
/// not depend on scheduling.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based index of the generated token.
    pub position: usize,
    pub queries_made: u32,
    pub rejected_tokens: Vec<TokenId>,
    pub chosen_token: TokenId,
    pub changed_from_unconstrained: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct GenerationTrace {
    pub output: Vec<TokenId>,
    pub steps: Vec<StepRecord>,
    /// Generation stopped early because every candidate was excluded.
    #[serde(default)]
    pub all_masked: bool,
}

impl GenerationTrace {
    pub fn total_queries(&self) -> u64 {
        self.steps.iter().map(|s| u64::from(s.queries_made)).sum()
    }

    pub fn total_rejections(&self) -> usize {
        self.steps.iter().map(|s| s.rejected_tokens.len()).sum()
    }

    pub fn tokens_changed(&self) -> usize {
        self.steps.iter().filter(|s| s.changed_from_unconstrained).count()
    }
}

/// Tokens ordered by descending score, lowest id first among ties, with
/// excluded tokens dropped.
fn rank(scores: &[f64]) -> Vec<TokenId> {
    let mut order: Vec<TokenId> = (0..scores.len() as TokenId)
        .filter(|&t| scores[t as usize] != EXCLUDED)
        .collect();
    order.sort_by(|&a, &b| {
        scores[b as usize]
            .total_cmp(&scores[a as usize])
            .then(a.cmp(&b))
    });
    order
}

/// Picks from `candidates` (already in rank order) using the uniform draw `u`.
fn pick(candidates: &[TokenId], scores: &[f64], u: f64) -> TokenId {
    if candidates.len() == 1 {
        return candidates[0];
    }
    let weights: Vec<f64> = candidates
        .iter()
        .map(|&t| scores[t as usize].max(0.0))
        .collect();
    let total: f64 = weights.iter().sum();
    if total.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        let idx = ((u * candidates.len() as f64) as usize).min(candidates.len() - 1);
        return candidates[idx];
    }
    let target = u * total;
    let mut acc = 0.0;
    for (&t, w) in candidates.iter().zip(&weights) {
        acc += w;
        if target < acc {
            return t;
        }
    }
    *candidates
        .iter()
        .zip(&weights)
        .rev()
        .find(|(_, &w)| w > 0.0)
        .map(|(t, _)| t)
        .unwrap()
}

/// Picks a token from a (possibly masked) score vector.
pub fn sample_from_scores(scores: &[f64], sampler: &SamplerSpec, u: f64) -> Result<TokenId> {
    let order = rank(scores);
    if order.is_empty() {
        return Err(Error::AllMasked);
    }
    let width = sampler.width().min(order.len());
    Ok(pick(&order[..width], scores, u))
}

/// Copies the last `n - 1` context tokens into `window` and returns whether a
/// full window exists.
fn prepare_window(window: &mut Vec<TokenId>, context: &[TokenId], n: usize) -> bool {
    window.clear();
    if context.len() + 1 < n {
        return false;
    }
    window.extend_from_slice(&context[context.len() + 1 - n..]);
    window.push(0);
    true
}

/// Replaces the score of every token completing a stored n-gram with
/// [`EXCLUDED`]. Contexts shorter than `n - 1` exclude nothing.
pub fn mask_scores(
    scores: &[f64],
    context: &[TokenId],
    filter: &dyn NGramMembership,
) -> Result<Vec<f64>> {
    let n = filter.ngram_len();
    let mut masked = scores.to_vec();
    let mut window = Vec::with_capacity(n);
    if !prepare_window(&mut window, context, n) {
        return Ok(masked);
    }
    for (t, s) in masked.iter_mut().enumerate() {
        *window.last_mut().unwrap() = t as TokenId;
        if filter.contains_ngram(&window) {
            *s = EXCLUDED;
        }
    }
    if masked.iter().all(|&s| s == EXCLUDED) {
        return Err(Error::AllMasked);
    }
    Ok(masked)
}

fn draw(rng: &mut ChaCha8Rng, sampler: &SamplerSpec) -> f64 {
    if sampler.is_stochastic() {
        rng.random::<f64>()
    } else {
        0.0
    }
}

fn generate(
    lm: &dyn LanguageModel,
    prompt: &[TokenId],
    steps: usize,
    filter: Option<&dyn NGramMembership>,
    sampler: &SamplerSpec,
) -> GenerationTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let width = sampler.width();
    let n = filter.map_or(0, |f| f.ngram_len());
    let mut context = prompt.to_vec();
    let mut window = Vec::with_capacity(n);
    let mut trace = GenerationTrace::default();

    for position in 1..=steps {
        let scores = lm.next_scores(&context);
        let order = rank(&scores);
        let u = draw(&mut rng, sampler);
        if order.is_empty() {
            trace.all_masked = true;
            break;
        }
        let unconstrained = pick(&order[..width.min(order.len())], &scores, u);

        let mut rejected = Vec::new();
        let mut queries = 0u32;
        let accepted: Vec<TokenId> = match filter {
            Some(f) if prepare_window(&mut window, &context, n) => {
                let mut accepted = Vec::with_capacity(width);
                for &t in &order {
                    *window.last_mut().unwrap() = t;
                    queries += 1;
                    if f.contains_ngram(&window) {
                        rejected.push(t);
                    } else {
                        accepted.push(t);
                        if accepted.len() == width {
                            break;
                        }
                    }
                }
                accepted
            }
            _ => order[..width.min(order.len())].to_vec(),
        };
        if accepted.is_empty() {
            trace.all_masked = true;
            break;
        }
        let chosen = pick(&accepted, &scores, u);
        trace.steps.push(StepRecord {
            position,
            queries_made: queries,
            rejected_tokens: rejected,
            chosen_token: chosen,
            changed_from_unconstrained: chosen != unconstrained,
        });
        trace.output.push(chosen);
        context.push(chosen);
    }
    trace
}

/// Generation that never emits a token completing a stored n-gram. The
/// prompt is part of the rolling context, so windows that straddle the
/// prompt/output boundary are checked too.
pub fn memfree_generate(
    lm: &dyn LanguageModel,
    prompt: &[TokenId],
    steps: usize,
    filter: &dyn NGramMembership,
    sampler: &SamplerSpec,
) -> GenerationTrace {
    generate(lm, prompt, steps, Some(filter), sampler)
}

pub fn unconstrained_generate(
    lm: &dyn LanguageModel,
    prompt: &[TokenId],
    steps: usize,
    sampler: &SamplerSpec,
) -> GenerationTrace {
    generate(lm, prompt, steps, None, sampler)
}

/// Whole-sequence "is this a verbatim substring of the training data".
pub trait SequenceOracle {
    fn contains_sequence(&self, seq: &[TokenId]) -> bool;
}

impl SequenceOracle for CorpusIndex {
    fn contains_sequence(&self, seq: &[TokenId]) -> bool {
        CorpusIndex::contains_sequence(self, seq)
    }
}

impl<F: Fn(&[TokenId]) -> bool> SequenceOracle for F {
    fn contains_sequence(&self, seq: &[TokenId]) -> bool {
        self(seq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CensorOutcome {
    /// First attempt (1-based) whose output is not in the corpus.
    Accepted { output: Vec<TokenId>, attempt: usize },
    Abort { attempts: usize },
}

/// Regenerates whole outputs until one is not found verbatim in the corpus.
/// Attempt `a` samples with `derive_seed(sampler.seed, a)`.
pub fn retroactive_censor(
    lm: &dyn LanguageModel,
    prompt: &[TokenId],
    steps: usize,
    corpus: &dyn SequenceOracle,
    max_attempts: usize,
    sampler: &SamplerSpec,
) -> CensorOutcome {
    for attempt in 1..=max_attempts {
        let spec = sampler.with_seed(derive_seed(sampler.seed, attempt as u64));
        let trace = unconstrained_generate(lm, prompt, steps, &spec);
        if !corpus.contains_sequence(&trace.output) {
            return CensorOutcome::Accepted {
                output: trace.output,
                attempt,
            };
        }
    }
    CensorOutcome::Abort {
        attempts: max_attempts,
    }
}
