//! The `jointtag` command line: `train`, `eval`, `tag` and `stats`.
//!
//! Data products go to the supplied writer (stdout in the binary); logs go to
//! standard error through `log`.

use crate::config::{clip_from, ConfigError, ConfigFile, RunConfig};
use crate::corpus::{build_vocab, corpus_stats, decode_labels, load_corpus, tag_histogram, CorpusError, TaggedSentence};
use crate::metrics::{error_decomposition, evaluate, evaluate_predictions, MetricsError};
use crate::modelfile::{load_model, save_model, ModelFileError, SavedModel};
use crate::network::{predict_tags, NetworkError};
use crate::training::{train, TrainError};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const FINAL_MODEL: &str = "model.kjt";
pub const BEST_MODEL: &str = "best.kjt";
pub const TRAIN_LOG: &str = "train_log.jsonl";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelFileError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{what}: {source}")]
    Io {
        what: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(what: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let what = what.into();
    move |source| CliError::Io { what, source }
}

#[derive(Debug, Parser)]
#[command(name = "jointtag", version, about = "Joint Khmer word segmentation and POS tagging")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write final and best checkpoints.
    Train(TrainArgs),
    /// Score a model on a tagged corpus.
    Eval(EvalArgs),
    /// Segment and tag raw text, one sentence per line.
    Tag(TagArgs),
    /// Tag histogram and corpus counts.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Held-out corpus used to pick the best checkpoint.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Corpus scored with the best checkpoint after training.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub stacks: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Global gradient norm threshold; 0 disables clipping.
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// key=value file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "oracle")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    /// Score the reference against itself instead of running a model.
    #[arg(long)]
    pub oracle: bool,
    /// Emit line-delimited JSON records instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TagArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Input file; standard input when absent.
    pub input: Option<PathBuf>,
    /// Feed ASCII spaces to the model as ordinary characters.
    #[arg(long)]
    pub keep_spaces: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut rc = RunConfig::default();
        if let Some(path) = &self.config {
            ConfigFile::load(path)?.apply(&mut rc)?;
        }
        let t = &mut rc.train;
        t.hidden_dim = self.hidden.unwrap_or(t.hidden_dim);
        t.stacks = self.stacks.unwrap_or(t.stacks);
        t.batch_size = self.batch.unwrap_or(t.batch_size);
        t.lr = self.lr.unwrap_or(t.lr);
        t.epochs = self.epochs.unwrap_or(t.epochs);
        t.seed = self.seed.unwrap_or(t.seed);
        t.threads = self.threads.unwrap_or(t.threads);
        if let Some(c) = self.clip {
            t.clip = clip_from(c);
        }
        rc.train_path = self.train.clone().or(rc.train_path);
        rc.dev_path = self.dev.clone().or(rc.dev_path);
        rc.test_path = self.test.clone().or(rc.test_path);
        if let Some(out) = &self.out {
            rc.out_dir = out.clone();
        }
        Ok(rc)
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => cmd_train(&a.resolve()?, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Tag(a) => cmd_tag(&a, out),
        Command::Stats(a) => cmd_stats(&a, out),
    }
}

fn load_optional(path: &Option<PathBuf>) -> Result<Vec<TaggedSentence>, CliError> {
    Ok(match path {
        Some(p) => load_corpus(p)?,
        None => Vec::new(),
    })
}

pub fn cmd_train(rc: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let train_path = rc.train_path.as_ref().ok_or_else(|| CliError::Usage("train: --train is required".into()))?;
    let train_corpus = load_corpus(train_path)?;
    let dev = load_optional(&rc.dev_path)?;
    let test = load_optional(&rc.test_path)?;
    let vocab = build_vocab(&train_corpus);
    log::info!(
        "{} training sentences, {} characters in vocabulary, config {:?}",
        train_corpus.len(),
        vocab.len(),
        rc.train
    );

    std::fs::create_dir_all(&rc.out_dir).map_err(io_err(rc.out_dir.display().to_string()))?;
    let log_path = rc.out_dir.join(TRAIN_LOG);
    let mut log_file = std::fs::File::create(&log_path).map_err(io_err(log_path.display().to_string()))?;
    let mut write_err = None;
    let outcome = train(&rc.train, &vocab, &train_corpus, &dev, |rec| {
        let line = serde_json::to_string(rec).expect("epoch record serializes");
        let res = writeln!(out, "{line}").and_then(|_| writeln!(log_file, "{line}"));
        if let Err(e) = res {
            write_err.get_or_insert(e);
        }
        log::info!("epoch {} loss {:.6}", rec.epoch, rec.mean_loss);
    })?;
    if let Some(e) = write_err {
        return Err(CliError::Io { what: "training log".into(), source: e });
    }

    save_model(&rc.out_dir.join(FINAL_MODEL), &outcome.final_params, &vocab)?;
    save_model(&rc.out_dir.join(BEST_MODEL), &outcome.best_params, &vocab)?;
    log::info!("best checkpoint: epoch {} (held-out accuracy {:?})", outcome.best_epoch, outcome.best_accuracy);
    if !test.is_empty() {
        let report = evaluate(&outcome.best_params, &test, &vocab)?;
        write!(out, "{}", report.render_table()).map_err(io_err("stdout"))?;
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let reference = load_corpus(&a.test)?;
    let report = if a.oracle {
        evaluate_predictions(&reference, &reference, 0)?
    } else {
        let path = a.model.as_ref().ok_or_else(|| CliError::Usage("eval: --model is required".into()))?;
        let m = load_model(path)?;
        evaluate(&m.params, &reference, &m.vocab)?
    };
    if a.json {
        for line in report.to_records() {
            writeln!(out, "{line}").map_err(io_err("stdout"))?;
        }
    } else {
        write!(out, "{}", report.render_table()).map_err(io_err("stdout"))?;
        let e = error_decomposition(report.seg_accuracy(), report.overall_accuracy);
        writeln!(
            out,
            "Additive split with tagging error taken as 1 - POS accuracy: {:.2}% + {:.2}% = {:.2}%",
            100.0 * e.eps_s,
            100.0 * e.eps_p,
            100.0 * e.eps_t
        )
        .map_err(io_err("stdout"))?;
    }
    Ok(())
}

/// Segment and tag one raw line. Returns the khPOS-format line, empty for
/// input without taggable characters.
pub fn tag_line(model: &SavedModel, line: &str, keep_spaces: bool) -> Result<String, CliError> {
    let chars: Vec<char> = line.chars().filter(|&c| c != '\n' && c != '\r' && (keep_spaces || c != ' ')).collect();
    if chars.is_empty() {
        return Ok(String::new());
    }
    let labels = predict_tags(&model.params, &model.vocab.encode_chars(&chars))?;
    let decoded = decode_labels(&chars, &labels)?;
    let mut s = decoded.sentence;
    if keep_spaces {
        for w in &mut s.words {
            w.text.retain(|c| c != ' ');
        }
        s.words.retain(|w| !w.text.is_empty());
    }
    Ok(s.to_line())
}

pub fn cmd_tag(a: &TagArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let lines: Vec<String> = match &a.input {
        Some(p) => std::fs::read_to_string(p)
            .map_err(io_err(p.display().to_string()))?
            .lines()
            .map(str::to_string)
            .collect(),
        None => std::io::stdin().lock().lines().collect::<Result<_, _>>().map_err(io_err("stdin"))?,
    };
    let tagged: Vec<String> =
        lines.par_iter().map(|l| tag_line(&model, l, a.keep_spaces)).collect::<Result<_, _>>()?;
    for t in tagged {
        writeln!(out, "{t}").map_err(io_err("stdout"))?;
    }
    Ok(())
}

fn write_stats(name: &Path, corpus: &[TaggedSentence], json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let stats = corpus_stats(corpus);
    let hist = tag_histogram(corpus);
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(io_err("stdout"));
    if json {
        let v = serde_json::json!({ "corpus": name.display().to_string(), "stats": stats, "tags": hist });
        return w(out, v.to_string());
    }
    w(out, format!("{}", name.display()))?;
    w(out, format!("  sentences          {}", stats.sentences))?;
    w(out, format!("  words              {}", stats.tokens))?;
    w(out, format!("  word types         {}", stats.types))?;
    w(out, format!("  character vocab    {}", stats.vocab_size))?;
    w(out, format!("  words per sentence {:.2}", stats.words_per_sentence))?;
    w(out, format!("  {:<5} {:>9} {:>8}", "tag", "count", "percent"))?;
    for t in &hist {
        w(out, format!("  {:<5} {:>9} {:>7.2}%", t.tag.name(), t.count, t.percent))?;
    }
    let total: usize = hist.iter().map(|t| t.count).sum();
    w(out, format!("  {:<5} {:>9}", "total", total))
}

pub fn cmd_stats(a: &StatsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.train.is_none() && a.test.is_none() {
        return Err(CliError::Usage("stats: give --train and/or --test".into()));
    }
    for path in [&a.train, &a.test].into_iter().flatten() {
        let corpus = load_corpus(path)?;
        write_stats(path, &corpus, a.json, out)?;
    }
    Ok(())
}
