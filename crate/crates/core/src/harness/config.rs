use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bloom::DEFAULT_FP;
use crate::corpus::{DEFAULT_PREFIX_LEN, DEFAULT_SAMPLE_LEN, DEFAULT_TARGET_LEN};
use crate::decoding::{SamplerKind, SamplerSpec};
use crate::error::{Error, Result};
use crate::ngram::{DEFAULT_MIN_COUNT, DEFAULT_N};
use crate::style::StyleKind;
use crate::tokenizer::Scheme;

/// Experiment settings. Loaded from `key = value` lines (`#` comments) and
/// then overridden field by field from the command line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub corpus: Option<PathBuf>,
    pub scheme: Scheme,
    pub n: usize,
    pub min_count: u64,
    pub fp: f64,
    pub prefix_len: usize,
    pub target_len: usize,
    pub sample_len: usize,
    pub steps: usize,
    pub sampler: SamplerKind,
    pub seed: u64,
    pub styles: Vec<StyleKind>,
    /// Toy model context length.
    pub order: usize,
    /// Only evaluate strings occurring at least this often.
    pub min_duplicates: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: None,
            scheme: Scheme::Whitespace,
            n: DEFAULT_N,
            min_count: DEFAULT_MIN_COUNT,
            fp: DEFAULT_FP,
            prefix_len: DEFAULT_PREFIX_LEN,
            target_len: DEFAULT_TARGET_LEN,
            sample_len: DEFAULT_SAMPLE_LEN,
            steps: DEFAULT_TARGET_LEN,
            sampler: SamplerKind::Argmax,
            seed: 0,
            styles: vec![StyleKind::Original],
            order: DEFAULT_N,
            min_duplicates: 1,
            output_dir: PathBuf::from("."),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}` has invalid value `{value}`")))
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", i + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.replace('-', "_").as_str() {
            "corpus" => self.corpus = Some(PathBuf::from(value)),
            "scheme" | "tokenizer" => self.scheme = value.parse()?,
            "n" => self.n = parse_num(key, value)?,
            "min_count" => self.min_count = parse_num(key, value)?,
            "fp" => self.fp = parse_num(key, value)?,
            "prefix_len" => self.prefix_len = parse_num(key, value)?,
            "target_len" => self.target_len = parse_num(key, value)?,
            "sample_len" => self.sample_len = parse_num(key, value)?,
            "steps" => self.steps = parse_num(key, value)?,
            "sampler" => self.sampler = value.parse()?,
            "top_k" => {
                self.sampler = SamplerKind::TopK {
                    k: parse_num(key, value)?,
                }
            }
            "seed" => self.seed = parse_num(key, value)?,
            "style" | "styles" => {
                self.styles = value
                    .split(',')
                    .map(|s| s.trim().parse())
                    .collect::<Result<_>>()?
            }
            "order" => self.order = parse_num(key, value)?,
            "min_duplicates" => self.min_duplicates = parse_num(key, value)?,
            "output_dir" | "out" => self.output_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n", self.n as u64),
            ("min_count", self.min_count),
            ("prefix_len", self.prefix_len as u64),
            ("target_len", self.target_len as u64),
            ("sample_len", self.sample_len as u64),
            ("steps", self.steps as u64),
            ("order", self.order as u64),
            ("min_duplicates", self.min_duplicates),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be positive")));
            }
        }
        if !(self.fp > 0.0 && self.fp < 1.0) {
            return Err(Error::Config(format!("fp = {} is outside (0, 1)", self.fp)));
        }
        if let SamplerKind::TopK { k: 0 } = self.sampler {
            return Err(Error::Config("top-k width must be positive".into()));
        }
        if self.styles.is_empty() {
            return Err(Error::Config("at least one style is required".into()));
        }
        if self.prefix_len + self.target_len > self.sample_len {
            return Err(Error::Config(
                "prefix_len + target_len must not exceed sample_len".into(),
            ));
        }
        Ok(())
    }

    pub fn sampler_spec(&self) -> SamplerSpec {
        SamplerSpec {
            kind: self.sampler,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!((cfg.n, cfg.min_count, cfg.prefix_len, cfg.target_len), (10, 10, 50, 50));
    }

    #[test]
    fn parses_key_values() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(
            "# comment\nn = 5\nmin-count = 2\nfp=0.001\nsampler = top-k:8\nstyle = lower, caps\nseed = 9 # trailing\n",
        )
        .unwrap();
        assert_eq!(cfg.n, 5);
        assert_eq!(cfg.min_count, 2);
        assert_eq!(cfg.fp, 0.001);
        assert_eq!(cfg.sampler, SamplerKind::TopK { k: 8 });
        assert_eq!(cfg.styles, vec![StyleKind::Lower, StyleKind::Caps]);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.apply_text("n = -1").is_err());
        assert!(cfg.apply_text("colour = red").is_err());
        assert!(cfg.apply_text("just words").is_err());
        cfg.fp = 1.5;
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            steps: 0,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
