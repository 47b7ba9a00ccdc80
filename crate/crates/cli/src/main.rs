use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use memfree::bloom::{NGramFilter, NGramMembership};
use memfree::corpus::{read_eval_examples, stream_documents, write_documents, write_eval_examples, Document};
use memfree::harness::canary::{self, CanaryConfig};
use memfree::harness::{
    build_filter, check_windows, evaluate, generate_pairs, overlap, prepare_examples, read_traces,
    trace_stats, write_records, write_traces, ExperimentConfig, Mode,
};
use memfree::ngram::count_ngrams;
use memfree::tokenizer::{Scheme, Tokenizer, Vocabulary};
use memfree::toy_lm::ToyLm;
use memfree::Error;

const FILTER_FILE: &str = "filter.mfbf";
const VOCAB_FILE: &str = "vocab.txt";

#[derive(Parser, Debug)]
#[command(name = "memfree", version, about = "n-gram Bloom filters and MemFree decoding")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Count n-grams, keep the frequent ones and write a Bloom filter.
    Build(BuildArgs),
    /// List every n-window of a text with its membership verdict.
    Check(CheckArgs),
    /// Paired undefended and defended generations for evaluation prompts.
    Generate(GenerateArgs),
    /// Score traces against ground truth.
    Eval(EvalArgs),
    /// Query, hit-position and tokens-changed statistics of traces.
    Stats(StatsArgs),
    /// How much of a set of reference texts the filter covers.
    Overlap(OverlapArgs),
    /// Write a synthetic corpus with duplicated canary documents.
    Canary(CanaryArgs),
}

/// Settings shared by every subcommand. Flags override the config file.
#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    min_count: Option<u64>,
    #[arg(long, global = true)]
    fp: Option<f64>,
    /// Comma-separated prompt styles: original, spaces, lower, caps.
    #[arg(long, global = true)]
    style: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// `argmax` or `top-k[:K]`.
    #[arg(long, global = true)]
    sampler: Option<String>,
    /// Shorthand for `--sampler top-k:K`.
    #[arg(long, global = true)]
    top_k: Option<usize>,
    /// Tokenizer scheme: whitespace or byte.
    #[arg(long, global = true)]
    scheme: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        let overrides = [
            ("n", self.n.map(|v| v.to_string())),
            ("min_count", self.min_count.map(|v| v.to_string())),
            ("fp", self.fp.map(|v| v.to_string())),
            ("style", self.style.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("steps", self.steps.map(|v| v.to_string())),
            ("sampler", self.sampler.clone()),
            ("top_k", self.top_k.map(|v| v.to_string())),
            ("scheme", self.scheme.clone()),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
        ];
        for (key, value) in overrides {
            if let Some(value) = value {
                cfg.set(key, &value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct BuildArgs {
    /// Corpus files (`.jsonl` records or plain text). Defaults to `corpus` from the config.
    corpus: Vec<PathBuf>,
    /// Also write the n-gram counts dump here.
    #[arg(long)]
    counts: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[arg(long)]
    filter: PathBuf,
    /// Vocabulary file; defaults to `vocab.txt` next to the filter.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[command(flatten)]
    filter: FilterArgs,
    /// Text to check; read from stdin when absent.
    text: Option<String>,
    #[arg(long, conflicts_with = "text")]
    file: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    filter: FilterArgs,
    /// Training corpus for the toy model and duplicate counts.
    corpus: Vec<PathBuf>,
    /// Documents to take prompts from; defaults to the corpus.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Toy model context length.
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    prefix_len: Option<usize>,
    #[arg(long)]
    target_len: Option<usize>,
    #[arg(long)]
    sample_len: Option<usize>,
    /// Skip prompts occurring fewer times than this in the corpus.
    #[arg(long)]
    min_duplicates: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    examples: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Count verbatim n-gram hits against this filter.
    #[arg(long)]
    filter: Option<PathBuf>,
    /// Report file; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    traces: PathBuf,
}

#[derive(Args, Debug)]
struct OverlapArgs {
    #[command(flatten)]
    filter: FilterArgs,
    /// One target set per file.
    #[arg(required = true)]
    targets: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct CanaryArgs {
    /// Comma-separated exact-copy counts, one canary group each.
    #[arg(long)]
    duplicates: Option<String>,
    #[arg(long)]
    background_docs: Option<usize>,
    #[arg(long)]
    canaries_per_count: Option<usize>,
    #[arg(long)]
    near_duplicates: Option<usize>,
}

#[derive(Debug)]
enum Failure {
    Hit,
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 3,
        Error::Format(_) | Error::Record { .. } | Error::Alignment(_) | Error::InvalidToken(_) => 4,
        Error::Config(_) | Error::Domain(_) | Error::AllMasked => 2,
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, value).map_err(io::Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn read_corpus(paths: &[PathBuf], cfg: &ExperimentConfig) -> Result<Vec<Document>, Error> {
    let paths: Vec<PathBuf> = if paths.is_empty() {
        cfg.corpus.iter().cloned().collect()
    } else {
        paths.to_vec()
    };
    if paths.is_empty() {
        return Err(Error::Config("no corpus given".into()));
    }
    let mut docs = Vec::new();
    for p in &paths {
        for doc in stream_documents(p)? {
            docs.push(doc?);
        }
    }
    Ok(docs)
}

fn load_filter(path: &Path) -> Result<NGramFilter, Error> {
    NGramFilter::deserialize(io::BufReader::new(File::open(path)?))
}

fn load_tokenizer(scheme: Scheme, vocab: Option<&Path>, filter: Option<&Path>) -> Result<Tokenizer, Error> {
    match scheme {
        Scheme::Byte => Ok(Tokenizer::Byte),
        Scheme::Whitespace => {
            let path = match (vocab, filter) {
                (Some(v), _) => v.to_path_buf(),
                (None, Some(f)) => f.with_file_name(VOCAB_FILE),
                (None, None) => {
                    return Err(Error::Config("--vocab is required for the whitespace scheme".into()))
                }
            };
            Ok(Tokenizer::Whitespace(Vocabulary::load(&path)?))
        }
    }
}

fn build(common: &Common, args: &BuildArgs) -> Result<(), Failure> {
    let cfg = common.config()?;
    let docs = read_corpus(&args.corpus, &cfg)?;
    let tokenizer = match cfg.scheme {
        Scheme::Byte => Tokenizer::Byte,
        Scheme::Whitespace => Tokenizer::Whitespace(Vocabulary::build(docs.iter().cloned().map(Ok))?),
    };
    let (filter, summary) = build_filter(&docs, &tokenizer, cfg.n, cfg.min_count, cfg.fp)?;
    if summary.inserted == 0 {
        warn!("no {}-gram occurs {} or more times; the filter is empty", cfg.n, cfg.min_count);
    }
    fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join(FILTER_FILE);
    filter.serialize(io::BufWriter::new(File::create(&path)?))?;
    if let Some(vocab) = tokenizer.vocabulary() {
        vocab.save(&cfg.output_dir.join(VOCAB_FILE))?;
    }
    if let Some(dump) = &args.counts {
        let counts = count_ngrams(docs.iter().cloned().map(Ok), cfg.n, &tokenizer)?;
        counts.write_dump(io::BufWriter::new(File::create(dump)?))?;
    }
    info!("wrote {}", path.display());
    print_json(&summary)
}

fn check(common: &Common, args: &CheckArgs) -> Result<(), Failure> {
    let cfg = common.config()?;
    let filter = load_filter(&args.filter.filter)?;
    let tokenizer = load_tokenizer(cfg.scheme, args.filter.vocab.as_deref(), Some(&args.filter.filter))?;
    let text = match (&args.text, &args.file) {
        (Some(t), _) => t.clone(),
        (None, Some(f)) => fs::read_to_string(f)?,
        (None, None) => io::read_to_string(io::stdin())?,
    };
    let tokens = tokenizer.tokenize(&text);
    let verdicts = check_windows(&tokens, &filter);
    let mut out = io::BufWriter::new(io::stdout().lock());
    for v in &verdicts {
        let record = serde_json::json!({
            "start": v.start,
            "ngram": tokenizer.detokenize(&v.ngram)?,
            "hit": v.hit,
        });
        writeln!(out, "{record}")?;
    }
    out.flush()?;
    if verdicts.iter().any(|v| v.hit) {
        Err(Failure::Hit)
    } else {
        Ok(())
    }
}

fn generate(common: &Common, args: &GenerateArgs) -> Result<(), Failure> {
    let mut cfg = common.config()?;
    let numeric = [
        ("order", args.order.map(|v| v as u64)),
        ("prefix_len", args.prefix_len.map(|v| v as u64)),
        ("target_len", args.target_len.map(|v| v as u64)),
        ("sample_len", args.sample_len.map(|v| v as u64)),
        ("min_duplicates", args.min_duplicates),
    ];
    for (key, value) in numeric {
        if let Some(v) = value {
            cfg.set(key, &v.to_string())?;
        }
    }
    if common.steps.is_none() && args.target_len.is_some() {
        cfg.steps = cfg.target_len;
    }
    cfg.validate()?;

    let filter = load_filter(&args.filter.filter)?;
    let tokenizer = load_tokenizer(cfg.scheme, args.filter.vocab.as_deref(), Some(&args.filter.filter))?;
    let corpus = read_corpus(&args.corpus, &cfg)?;
    let prompt_docs = match &args.prompts {
        Some(p) => stream_documents(p)?.collect::<Result<Vec<_>, _>>()?,
        None => corpus.clone(),
    };
    let lm = ToyLm::train_documents(corpus.iter().cloned().map(Ok), &tokenizer, cfg.order)?;
    let examples = prepare_examples(&prompt_docs, &corpus, &tokenizer, &cfg)?;
    let records = generate_pairs(&lm, &filter, &examples, &tokenizer, &cfg)?;

    fs::create_dir_all(&cfg.output_dir)?;
    write_eval_examples(&cfg.output_dir.join("examples.jsonl"), &examples)?;
    write_traces(&cfg.output_dir.join("traces.jsonl"), &records)?;
    let masked = records
        .iter()
        .filter(|r| r.mode == Mode::Defended && r.trace.all_masked)
        .count();
    if masked > 0 {
        warn!("{masked} defended generations stopped early: every candidate was filtered");
    }
    print_json(&serde_json::json!({
        "examples": examples.len(),
        "generations": records.len(),
        "all_masked": masked,
    }))
}

fn eval(common: &Common, args: &EvalArgs) -> Result<(), Failure> {
    let cfg = common.config()?;
    let records = read_traces(&args.traces)?;
    let examples = read_eval_examples(&args.examples)?;
    let filter = args.filter.as_deref().map(load_filter).transpose()?;
    let tokenizer = if records.is_empty() {
        Tokenizer::Byte
    } else {
        load_tokenizer(cfg.scheme, args.vocab.as_deref(), args.filter.as_deref())?
    };
    let report = evaluate(
        &records,
        &examples,
        &tokenizer,
        filter.as_ref().map(|f| f as &dyn NGramMembership),
    )?;
    match &args.output {
        Some(path) => report.write_jsonl(File::create(path)?)?,
        None => report.write_jsonl(io::stdout().lock())?,
    }
    Ok(())
}

fn stats(_common: &Common, args: &StatsArgs) -> Result<(), Failure> {
    let records = read_traces(&args.traces)?;
    let defended = records
        .iter()
        .filter(|r| r.mode == Mode::Defended)
        .map(|r| &r.trace);
    print_json(&trace_stats(defended))
}

fn overlap_cmd(common: &Common, args: &OverlapArgs) -> Result<(), Failure> {
    let cfg = common.config()?;
    let filter = load_filter(&args.filter.filter)?;
    let tokenizer = load_tokenizer(cfg.scheme, args.filter.vocab.as_deref(), Some(&args.filter.filter))?;
    let mut rows = Vec::new();
    for path in &args.targets {
        let texts: Vec<String> = stream_documents(path)?
            .map(|d| d.map(|d| d.text))
            .collect::<Result<_, _>>()?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        rows.push(overlap(&name, &texts, &tokenizer, &filter));
    }
    write_records(io::stdout().lock(), &rows)?;
    Ok(())
}

fn canary_cmd(common: &Common, args: &CanaryArgs) -> Result<(), Failure> {
    let mut cc = CanaryConfig {
        seed: common.seed.unwrap_or(0),
        ..CanaryConfig::default()
    };
    if let Some(list) = &args.duplicates {
        cc.duplicate_counts = list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad duplicate count `{s}`")))
            })
            .collect::<Result<_, _>>()?;
    }
    if let Some(v) = args.background_docs {
        cc.background_docs = v;
    }
    if let Some(v) = args.canaries_per_count {
        cc.canaries_per_count = v;
    }
    if let Some(v) = args.near_duplicates {
        cc.near_duplicates = v;
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out)?;
    let bench = canary::generate(&cc);
    write_documents(&out.join("corpus.jsonl"), &bench.documents)?;
    write_documents(&out.join("canaries.jsonl"), &bench.canary_documents())?;
    print_json(&serde_json::json!({
        "documents": bench.documents.len(),
        "canaries": bench.canaries.len(),
    }))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let common = &cli.common;
    match &cli.command {
        Command::Build(a) => build(common, a),
        Command::Check(a) => check(common, a),
        Command::Generate(a) => generate(common, a),
        Command::Eval(a) => eval(common, a),
        Command::Stats(a) => stats(common, a),
        Command::Overlap(a) => overlap_cmd(common, a),
        Command::Canary(a) => canary_cmd(common, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(&Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Hit) => ExitCode::from(1),
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
