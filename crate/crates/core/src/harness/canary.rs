//! Synthetic benchmark corpus: background documents plus canary documents
//! repeated a controlled number of times.
//!
//! Words are drawn from a Zipf-distributed synthetic lexicon. Besides its
//! exact copies, each canary can get `near_duplicates` noisy copies. Copy `r`
//! edits exactly the word positions `p` with `p % mutation_stride == r`
//! (substitution, deletion or insertion, chosen at random), the way web
//! corpora carry lightly edited versions of popular documents.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch",
];
const NUCLEI: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];

/// Deterministic pronounceable word for index `i`; distinct indices give
/// distinct words.
pub fn synthetic_word(i: usize) -> String {
    let base = ONSETS.len() * NUCLEI.len();
    let mut out = String::new();
    let mut v = i;
    loop {
        let s = v % base;
        out.push_str(ONSETS[s / NUCLEI.len()]);
        out.push_str(NUCLEI[s % NUCLEI.len()]);
        v /= base;
        if v == 0 {
            break;
        }
        v -= 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanaryConfig {
    pub seed: u64,
    pub lexicon_size: usize,
    pub zipf_exponent: f64,
    pub background_docs: usize,
    pub background_min_words: usize,
    pub background_max_words: usize,
    pub canary_words: usize,
    /// One entry per canary group: the exact-copy count for each canary.
    pub duplicate_counts: Vec<u64>,
    pub canaries_per_count: usize,
    pub near_duplicates: usize,
    pub mutation_stride: usize,
}

impl Default for CanaryConfig {
    fn default() -> Self {
        CanaryConfig {
            seed: 0,
            lexicon_size: 3000,
            zipf_exponent: 1.0,
            background_docs: 300,
            background_min_words: 60,
            background_max_words: 180,
            canary_words: 120,
            duplicate_counts: vec![10, 12, 16, 20, 24, 32, 48, 64, 96, 128],
            canaries_per_count: 3,
            near_duplicates: 12,
            mutation_stride: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canary {
    pub id: String,
    pub text: String,
    pub duplicates: u64,
}

#[derive(Debug, Clone)]
pub struct CanaryBenchmark {
    /// The full training corpus, shuffled.
    pub documents: Vec<Document>,
    pub canaries: Vec<Canary>,
}

impl CanaryBenchmark {
    /// One document per canary, usable as a prompt source.
    pub fn canary_documents(&self) -> Vec<Document> {
        self.canaries
            .iter()
            .map(|c| Document::new(c.id.clone(), c.text.clone()))
            .collect()
    }
}

struct Lexicon {
    words: Vec<String>,
    dist: WeightedIndex<f64>,
}

impl Lexicon {
    fn new(size: usize, exponent: f64) -> Self {
        let size = size.max(2);
        let weights: Vec<f64> = (1..=size).map(|r| 1.0 / (r as f64).powf(exponent)).collect();
        Lexicon {
            words: (0..size).map(synthetic_word).collect(),
            dist: WeightedIndex::new(&weights).expect("positive weights"),
        }
    }

    fn word<'a>(&'a self, rng: &mut ChaCha8Rng) -> &'a str {
        &self.words[self.dist.sample(rng)]
    }

    fn text(&self, rng: &mut ChaCha8Rng, len: usize) -> Vec<String> {
        (0..len).map(|_| self.word(rng).to_string()).collect()
    }
}

fn noisy_copy(
    words: &[String],
    residue: usize,
    stride: usize,
    lexicon: &Lexicon,
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    let mut out = Vec::with_capacity(words.len() + words.len() / stride + 1);
    for (p, w) in words.iter().enumerate() {
        if p % stride != residue {
            out.push(w.clone());
            continue;
        }
        match rng.random_range(0..3u8) {
            0 => {
                let mut sub = lexicon.word(rng);
                while sub == w {
                    sub = lexicon.word(rng);
                }
                out.push(sub.to_string());
            }
            1 => {}
            _ => {
                out.push(lexicon.word(rng).to_string());
                out.push(w.clone());
            }
        }
    }
    out
}

pub fn generate(cfg: &CanaryConfig) -> CanaryBenchmark {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lexicon = Lexicon::new(cfg.lexicon_size, cfg.zipf_exponent);
    let mut documents = Vec::new();

    for i in 0..cfg.background_docs {
        let len = rng.random_range(cfg.background_min_words..=cfg.background_max_words.max(cfg.background_min_words));
        documents.push(Document::new(format!("bg-{i:05}"), lexicon.text(&mut rng, len).join(" ")));
    }

    let stride = cfg.mutation_stride.max(1);
    let mut canaries = Vec::new();
    for (g, &dups) in cfg.duplicate_counts.iter().enumerate() {
        for c in 0..cfg.canaries_per_count {
            let id = format!("canary-d{dups:04}-g{g:02}-{c:02}");
            let words = lexicon.text(&mut rng, cfg.canary_words);
            let text = words.join(" ");
            for copy in 0..dups {
                documents.push(Document::new(format!("{id}-copy{copy:04}"), text.clone()));
            }
            for r in 0..cfg.near_duplicates {
                let noisy = noisy_copy(&words, r % stride, stride, &lexicon, &mut rng);
                documents.push(Document::new(format!("{id}-near{r:03}"), noisy.join(" ")));
            }
            canaries.push(Canary {
                id,
                text,
                duplicates: dups,
            });
        }
    }
    documents.shuffle(&mut rng);
    CanaryBenchmark {
        documents,
        canaries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn words_are_distinct() {
        let words: HashSet<_> = (0..20_000).map(synthetic_word).collect();
        assert_eq!(words.len(), 20_000);
        assert_eq!(synthetic_word(0), "ba");
    }

    #[test]
    fn copies_and_determinism() {
        let cfg = CanaryConfig {
            background_docs: 5,
            duplicate_counts: vec![3, 7],
            canaries_per_count: 2,
            near_duplicates: 4,
            ..CanaryConfig::default()
        };
        let a = generate(&cfg);
        let b = generate(&cfg);
        assert_eq!(a.documents, b.documents);
        assert_eq!(a.canaries.len(), 4);
        assert_eq!(a.documents.len(), 5 + 2 * 3 + 2 * 7 + 4 * 4);
        for c in &a.canaries {
            let exact = a.documents.iter().filter(|d| d.text == c.text).count() as u64;
            assert_eq!(exact, c.duplicates);
            assert_eq!(c.text.split_whitespace().count(), cfg.canary_words);
        }
    }

    #[test]
    fn noisy_copy_edits_only_its_residue() {
        let lexicon = Lexicon::new(50, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
        let noisy = noisy_copy(&words, 2, 12, &lexicon, &mut rng);
        let kept: Vec<_> = noisy.iter().filter(|w| w.starts_with('w')).cloned().collect();
        let expected: Vec<_> = words
            .iter()
            .enumerate()
            .filter(|(p, _)| p % 12 != 2)
            .map(|(_, w)| w.clone())
            .collect();
        for w in &expected {
            assert!(kept.contains(w));
        }
    }
}
