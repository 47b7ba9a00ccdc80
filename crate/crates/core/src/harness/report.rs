use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mode, TraceRecord};
use crate::bloom::NGramMembership;
use crate::corpus::{read_records, EvalExample};
use crate::decoding::GenerationTrace;
use crate::error::{Error, Result};
use crate::similarity::{Classifier, SimilarityReport};
use crate::style::StyleKind;
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub example_id: String,
    pub style: StyleKind,
    pub seed: u64,
    pub bucket: u32,
    pub duplicate_count: u64,
    pub undefended: SimilarityReport,
    pub defended: SimilarityReport,
    pub defended_all_masked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    pub bucket: u32,
    pub pairs: usize,
    pub undefended_mean_bleu: f64,
    pub defended_mean_bleu: f64,
    pub undefended_mean_edit_similarity: f64,
    pub defended_mean_edit_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceStats {
    pub generations: usize,
    pub mean_queries: f64,
    /// Total filter queries per generation -> number of generations.
    pub queries_per_generation: BTreeMap<u64, usize>,
    /// 1-based output position -> rejected candidates at that position.
    pub hits_by_position: BTreeMap<usize, u64>,
    /// Tokens differing from the unconstrained pick -> number of generations.
    pub tokens_changed: BTreeMap<usize, usize>,
    pub all_masked: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalSummary {
    pub pairs: usize,
    pub undefended_approx_fraction: f64,
    pub defended_approx_fraction: f64,
    pub undefended_verbatim_fraction: f64,
    pub defended_verbatim_fraction: f64,
    /// Pairs where the defended BLEU exceeds the undefended BLEU.
    pub similarity_increase_fraction: f64,
    /// Defended generations that are approximately memorized yet contain no
    /// stored n-gram.
    pub defended_approx_without_hits: usize,
    pub defended_all_masked: usize,
    pub trace_stats: TraceStats,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: Vec<PairReport>,
    pub buckets: Vec<BucketSummary>,
    pub summary: EvalSummary,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum ReportLine<'a> {
    Pair(&'a PairReport),
    Bucket(&'a BucketSummary),
    Summary(&'a EvalSummary),
}

impl EvalReport {
    /// Pairs, then buckets, then one summary record.
    pub fn write_jsonl<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        let lines = self
            .pairs
            .iter()
            .map(ReportLine::Pair)
            .chain(self.buckets.iter().map(ReportLine::Bucket))
            .chain(std::iter::once(ReportLine::Summary(&self.summary)));
        for line in lines {
            serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

fn fraction(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

fn mean<I: Iterator<Item = f64>>(values: I) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scores paired traces against ground truth. `records` must alternate
/// undefended/defended for the same example, style and seed, as written by
/// `generate_pairs`.
pub fn evaluate(
    records: &[TraceRecord],
    examples: &[EvalExample],
    tokenizer: &Tokenizer,
    membership: Option<&dyn NGramMembership>,
) -> Result<EvalReport> {
    if !records.len().is_multiple_of(2) {
        return Err(Error::Alignment(format!(
            "{} trace records cannot form undefended/defended pairs",
            records.len()
        )));
    }
    let by_id: HashMap<&str, &EvalExample> = examples.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut classifier = Classifier::new(tokenizer);
    if let Some(m) = membership {
        classifier = classifier.with_membership(m);
    }

    let mut pairs = Vec::with_capacity(records.len() / 2);
    for (i, pair) in records.chunks(2).enumerate() {
        let (und, def) = (&pair[0], &pair[1]);
        if und.mode != Mode::Undefended
            || def.mode != Mode::Defended
            || und.example_id != def.example_id
            || und.style != def.style
            || und.seed != def.seed
        {
            return Err(Error::Alignment(format!(
                "records {} and {} are not an undefended/defended pair",
                2 * i + 1,
                2 * i + 2
            )));
        }
        let ex = by_id.get(und.example_id.as_str()).ok_or_else(|| {
            Error::Alignment(format!("no ground truth for example `{}`", und.example_id))
        })?;
        pairs.push(PairReport {
            example_id: ex.id.clone(),
            style: und.style,
            seed: und.seed,
            bucket: ex.bucket,
            duplicate_count: ex.duplicate_count,
            undefended: classifier.classify(&und.trace.output, &ex.ground_truth)?,
            defended: classifier.classify(&def.trace.output, &ex.ground_truth)?,
            defended_all_masked: def.trace.all_masked,
        });
    }

    let mut grouped: BTreeMap<u32, Vec<&PairReport>> = BTreeMap::new();
    for p in &pairs {
        grouped.entry(p.bucket).or_default().push(p);
    }
    let buckets = grouped
        .into_iter()
        .map(|(bucket, ps)| BucketSummary {
            bucket,
            pairs: ps.len(),
            undefended_mean_bleu: mean(ps.iter().map(|p| p.undefended.bleu)),
            defended_mean_bleu: mean(ps.iter().map(|p| p.defended.bleu)),
            undefended_mean_edit_similarity: mean(ps.iter().map(|p| p.undefended.edit_similarity)),
            defended_mean_edit_similarity: mean(ps.iter().map(|p| p.defended.edit_similarity)),
        })
        .collect();

    let total = pairs.len();
    let count = |f: &dyn Fn(&PairReport) -> bool| pairs.iter().filter(|p| f(p)).count();
    let defended_traces = records
        .iter()
        .filter(|r| r.mode == Mode::Defended)
        .map(|r| &r.trace);
    let summary = EvalSummary {
        pairs: total,
        undefended_approx_fraction: fraction(count(&|p| p.undefended.approx_memorized), total),
        defended_approx_fraction: fraction(count(&|p| p.defended.approx_memorized), total),
        undefended_verbatim_fraction: fraction(count(&|p| p.undefended.verbatim_memorized), total),
        defended_verbatim_fraction: fraction(count(&|p| p.defended.verbatim_memorized), total),
        similarity_increase_fraction: fraction(count(&|p| p.defended.bleu > p.undefended.bleu), total),
        defended_approx_without_hits: count(&|p| {
            p.defended.approx_memorized && p.defended.verbatim_ngram_hits == 0
        }),
        defended_all_masked: count(&|p| p.defended_all_masked),
        trace_stats: trace_stats(defended_traces),
    };
    Ok(EvalReport {
        pairs,
        buckets,
        summary,
    })
}

pub fn trace_stats<'a, I: IntoIterator<Item = &'a GenerationTrace>>(traces: I) -> TraceStats {
    let mut stats = TraceStats::default();
    let mut queries = 0u64;
    for t in traces {
        stats.generations += 1;
        let q = t.total_queries();
        queries += q;
        *stats.queries_per_generation.entry(q).or_default() += 1;
        *stats.tokens_changed.entry(t.tokens_changed()).or_default() += 1;
        for s in &t.steps {
            if !s.rejected_tokens.is_empty() {
                *stats.hits_by_position.entry(s.position).or_default() +=
                    s.rejected_tokens.len() as u64;
            }
        }
        stats.all_masked += usize::from(t.all_masked);
    }
    stats.mean_queries = fraction(queries as usize, stats.generations);
    stats
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub target_set: String,
    pub targets: usize,
    /// Percentage of targets with at least n tokens.
    pub eligible_pct: f64,
    /// Percentage of targets with at least one stored n-gram.
    pub hit_pct: f64,
    pub ngrams: u64,
    /// Percentage of all target n-grams that are stored.
    pub ngram_hit_pct: f64,
}

pub fn overlap<S: AsRef<str>>(
    target_set: &str,
    targets: &[S],
    tokenizer: &Tokenizer,
    membership: &dyn NGramMembership,
) -> OverlapRow {
    let n = membership.ngram_len();
    let (mut eligible, mut hit, mut ngrams, mut ngram_hits) = (0usize, 0usize, 0u64, 0u64);
    for t in targets {
        let tokens = tokenizer.tokenize(t.as_ref());
        if tokens.len() < n {
            continue;
        }
        eligible += 1;
        let hits = tokens.windows(n).filter(|w| membership.contains_ngram(w)).count() as u64;
        ngrams += (tokens.len() - n + 1) as u64;
        ngram_hits += hits;
        hit += usize::from(hits > 0);
    }
    OverlapRow {
        target_set: target_set.to_string(),
        targets: targets.len(),
        eligible_pct: 100.0 * fraction(eligible, targets.len()),
        hit_pct: 100.0 * fraction(hit, targets.len()),
        ngrams,
        ngram_hit_pct: if ngrams == 0 {
            0.0
        } else {
            100.0 * ngram_hits as f64 / ngrams as f64
        },
    }
}

pub fn write_records<T: Serialize, W: Write>(out: W, records: &[T]) -> Result<()> {
    let mut out = BufWriter::new(out);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<Vec<TraceRecord>> {
    read_records(path)
}

pub fn write_traces(path: &Path, records: &[TraceRecord]) -> Result<()> {
    write_records(File::create(path)?, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::StepRecord;
    use crate::tokenizer::Vocabulary;

    fn tok() -> Tokenizer {
        let mut v = Vocabulary::new();
        v.extend_from_text("a b c d e f g h");
        Tokenizer::Whitespace(v)
    }

    fn record(id: &str, mode: Mode, output: Vec<u32>) -> TraceRecord {
        TraceRecord {
            example_id: id.into(),
            mode,
            style: StyleKind::Original,
            seed: 0,
            prompt: vec![1],
            trace: GenerationTrace {
                steps: output
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| StepRecord {
                        position: i + 1,
                        queries_made: 1,
                        rejected_tokens: vec![],
                        chosen_token: t,
                        changed_from_unconstrained: false,
                    })
                    .collect(),
                output,
                all_masked: false,
            },
        }
    }

    fn example(id: &str, truth: Vec<u32>) -> EvalExample {
        EvalExample {
            id: id.into(),
            prompt: vec![1],
            ground_truth: truth,
            duplicate_count: 16,
            bucket: 16,
        }
    }

    #[test]
    fn identical_everywhere() {
        let t = tok();
        let truth = vec![2, 3, 4, 5, 6];
        let recs = vec![
            record("x", Mode::Undefended, truth.clone()),
            record("x", Mode::Defended, truth.clone()),
        ];
        let r = evaluate(&recs, &[example("x", truth)], &t, None).unwrap();
        assert_eq!(r.summary.defended_approx_fraction, 1.0);
        assert_eq!(r.summary.undefended_verbatim_fraction, 1.0);
        assert_eq!(r.buckets[0].defended_mean_bleu, 1.0);
        assert_eq!(r.summary.similarity_increase_fraction, 0.0);
    }

    #[test]
    fn empty_and_misaligned() {
        let t = tok();
        let r = evaluate(&[], &[], &t, None).unwrap();
        assert_eq!(r.summary.pairs, 0);
        assert!(r.buckets.is_empty());
        let recs = vec![record("x", Mode::Undefended, vec![2])];
        assert!(matches!(
            evaluate(&recs, &[example("x", vec![2])], &t, None),
            Err(Error::Alignment(_))
        ));
        let recs = vec![
            record("x", Mode::Undefended, vec![2]),
            record("y", Mode::Defended, vec![2]),
        ];
        assert!(matches!(
            evaluate(&recs, &[example("x", vec![2])], &t, None),
            Err(Error::Alignment(_))
        ));
        let recs = vec![
            record("z", Mode::Undefended, vec![2]),
            record("z", Mode::Defended, vec![2]),
        ];
        assert!(matches!(
            evaluate(&recs, &[example("x", vec![2])], &t, None),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn stats_of_fully_rejected_trace() {
        let mut r = record("x", Mode::Defended, vec![2, 3, 4]);
        for s in &mut r.trace.steps {
            s.rejected_tokens = vec![7];
            s.queries_made = 2;
            s.changed_from_unconstrained = true;
        }
        let s = trace_stats([&r.trace]);
        assert_eq!(s.tokens_changed, BTreeMap::from([(3, 1)]));
        assert_eq!(s.queries_per_generation, BTreeMap::from([(6, 1)]));
        assert_eq!(s.hits_by_position, BTreeMap::from([(1, 1), (2, 1), (3, 1)]));
        let clean = record("y", Mode::Defended, vec![2]);
        assert_eq!(trace_stats([&clean.trace]).tokens_changed, BTreeMap::from([(0, 1)]));
    }

    #[test]
    fn report_lines_end_with_summary() {
        let t = tok();
        let truth = vec![2, 3, 4, 5];
        let recs = vec![
            record("x", Mode::Undefended, truth.clone()),
            record("x", Mode::Defended, vec![5, 4, 3, 2]),
        ];
        let r = evaluate(&recs, &[example("x", truth)], &t, None).unwrap();
        let mut buf = Vec::new();
        r.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("\"record\":\"pair\""));
        assert!(lines[2].contains("\"record\":\"summary\""));
    }
}
