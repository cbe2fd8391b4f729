//! Command-line front end: preprocess, train, generate, evaluate, gradcheck, stats.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{AttentionMode, TrainConfig};
use crate::corpus::{
    corpus_stats, preprocess, read_jsonl, text_documents, write_jsonl, PreprocessOptions, ProcessedRecord, RawRecord,
    SplitName, TagVocabulary, Vocabulary,
};
use crate::decoder::{generate_report, GenerateOptions};
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_reports, per_image_scores, Tokens};
use crate::model::init_params;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::training::{log_csv, loss_gradient_check, random_example, train_with, Checkpoint, Example};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const TAGS_FILE: &str = "tags.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.hgc";
pub const LOG_FILE: &str = "log.csv";
pub const REPORTS_FILE: &str = "reports.jsonl";
pub const ATTENTION_DIR: &str = "attention";
pub const EVAL_FILE: &str = "eval.json";
pub const PER_IMAGE_FILE: &str = "per_image.csv";

#[derive(Parser, Debug)]
#[command(name = "medreport", version, about = "Train and run a medical imaging report generator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Attention mode: none, visual_only, semantic_only or co.
    #[arg(long, global = true)]
    pub mode: Option<AttentionMode>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Tokenize a raw JSONL corpus, build vocabularies and assign splits.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Raw corpus JSONL.
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a preprocessed corpus directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate reports for one split with a trained checkpoint.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
    },
    /// Score generated reports against references.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// JSONL with `id` and `sentences` (token lists) per line.
        #[arg(long)]
        candidates: PathBuf,
        /// JSONL with `id` and `sentences`; a preprocessed corpus works as is.
        #[arg(long)]
        references: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare reverse-mode gradients of the training loss with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
    },
    /// Corpus statistics of a raw JSONL corpus.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Preprocess { common, .. }
            | Command::Train { common, .. }
            | Command::Generate { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Gradcheck { common, .. }
            | Command::Stats { common, .. } => common,
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_DATA,
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve(base: TrainConfig, common: &Common) -> Result<TrainConfig> {
    let mut cfg = base;
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = common.mode {
        cfg.attention_mode = mode;
    }
    Ok(cfg)
}

fn announce(cfg: &TrainConfig) {
    eprint!("# resolved config\n{}", cfg.to_text());
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn execute(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::Preprocess { common, corpus, out } => cmd_preprocess(common, corpus, out),
        Command::Train { common, corpus, out } => cmd_train(common, corpus, out),
        Command::Generate {
            common,
            corpus,
            checkpoint,
            out,
            split,
        } => cmd_generate(common, corpus, checkpoint, out, *split),
        Command::Evaluate {
            candidates,
            references,
            out,
            ..
        } => {
            announce(&resolve(TrainConfig::default(), cmd.common())?);
            cmd_evaluate(candidates, references, out.as_deref())
        }
        Command::Gradcheck { common, eps } => cmd_gradcheck(common, *eps),
        Command::Stats { common, corpus, out } => cmd_stats(common, corpus, out.as_deref()),
    }
}

fn cmd_preprocess(common: &Common, corpus: &Path, out: &Path) -> Result<i32> {
    let cfg = resolve(TrainConfig::default(), common)?;
    announce(&cfg);
    let records: Vec<RawRecord> = read_jsonl(corpus)?;
    let opts = PreprocessOptions {
        vocab_size: cfg.max_vocab,
        tfidf_k: cfg.tfidf_k,
        seed: cfg.seed,
        val_count: cfg.val_count,
        test_count: cfg.test_count,
    };
    let pre = preprocess(&records, &opts)?;
    create_dir(out)?;
    write_jsonl(out.join(CORPUS_FILE), &pre.records)?;
    pre.vocab.save(out.join(VOCAB_FILE))?;
    pre.tags.save(out.join(TAGS_FILE))?;
    eprintln!(
        "{} documents ({} dropped), vocabulary {} words covering {:.4} of tokens, {} tags",
        pre.records.len(),
        pre.dropped,
        pre.vocab.len(),
        pre.coverage,
        pre.tags.len()
    );
    Ok(EXIT_OK)
}

/// A preprocessed corpus directory loaded back into memory.
pub struct CorpusDir {
    pub dir: PathBuf,
    pub records: Vec<ProcessedRecord>,
    pub vocab: Vocabulary,
    pub tags: TagVocabulary,
}

impl CorpusDir {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(CorpusDir {
            dir: dir.to_path_buf(),
            records: read_jsonl(dir.join(CORPUS_FILE))?,
            vocab: Vocabulary::load(dir.join(VOCAB_FILE))?,
            tags: TagVocabulary::load(dir.join(TAGS_FILE))?,
        })
    }

    pub fn examples(&self, split: SplitName, cfg: &TrainConfig) -> Result<Vec<Example>> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| Example::from_document(&r.to_document(&self.vocab, Some(&self.dir)), &self.tags, cfg))
            .collect()
    }
}

fn cmd_train(common: &Common, corpus: &Path, out: &Path) -> Result<i32> {
    let data = CorpusDir::load(corpus)?;
    let mut cfg = resolve(TrainConfig::default(), common)?;
    cfg.vocab_size = data.vocab.len();
    cfg.num_tags = data.tags.len();
    announce(&cfg);
    cfg.validate()?;
    let train_set = data.examples(SplitName::Train, &cfg)?;
    let val_set = data.examples(SplitName::Val, &cfg)?;
    eprintln!("{} training and {} validation examples", train_set.len(), val_set.len());
    let outcome = train_with(&cfg, &train_set, &val_set, |row| {
        eprintln!(
            "epoch {:>4}  train {:.6}  val {}",
            row.epoch,
            row.train.total,
            row.val_loss.map_or("-".to_string(), |v| format!("{v:.6}"))
        );
    })?;
    create_dir(out)?;
    outcome.checkpoint.save(out.join(CHECKPOINT_FILE))?;
    write_file(&out.join(LOG_FILE), log_csv(&outcome.log))?;
    eprintln!(
        "best epoch {} (loss {:.6}) saved to {}",
        outcome.checkpoint.epoch,
        outcome.checkpoint.best_val_loss,
        out.join(CHECKPOINT_FILE).display()
    );
    Ok(EXIT_OK)
}

/// One line of the generated-reports file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedReport {
    pub id: String,
    pub sentences: Vec<Tokens>,
    pub stop_probs: Vec<f64>,
    pub truncated: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionDump {
    pub id: String,
    pub tags: Vec<String>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn cmd_generate(common: &Common, corpus: &Path, checkpoint: &Path, out: &Path, split: SplitName) -> Result<i32> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = resolve(ck.config.clone(), common)?;
    announce(&cfg);
    let data = CorpusDir::load(corpus)?;
    if data.vocab.len() != cfg.vocab_size || data.tags.len() != cfg.num_tags {
        return Err(Error::Domain(format!(
            "corpus has {} words / {} tags but the checkpoint expects {} / {}",
            data.vocab.len(),
            data.tags.len(),
            cfg.vocab_size,
            cfg.num_tags
        )));
    }
    let examples = data.examples(split, &cfg)?;
    let opts = GenerateOptions::from_config(&cfg);
    create_dir(out)?;
    let att_dir = out.join(ATTENTION_DIR);
    create_dir(&att_dir)?;
    let mut reports = Vec::with_capacity(examples.len());
    for ex in &examples {
        let mut tape = Tape::new();
        let enc = encode(&mut tape, &ck.params, &cfg, &ex.input, None)?;
        let (report, record) = generate_report(&mut tape, &ck.params, &cfg, &enc, &opts)?;
        let dump = AttentionDump {
            id: ex.id.clone(),
            tags: enc.tag_ids.iter().map(|&t| data.tags.tag(t).to_string()).collect(),
            alpha: record.alpha,
            beta: record.beta,
        };
        let path = att_dir.join(format!("{}.json", file_stem_for(&ex.id)));
        write_file(&path, serde_json::to_vec_pretty(&dump)?)?;
        reports.push(GeneratedReport {
            id: ex.id.clone(),
            sentences: report.sentences.iter().map(|s| data.vocab.decode(s)).collect(),
            stop_probs: report.stop_probs,
            truncated: report.truncated,
        });
    }
    write_jsonl(out.join(REPORTS_FILE), &reports)?;
    eprintln!("{} reports written to {}", reports.len(), out.join(REPORTS_FILE).display());
    Ok(EXIT_OK)
}

#[derive(Deserialize)]
struct SentencesLine {
    id: String,
    sentences: Vec<Tokens>,
}

fn cmd_evaluate(candidates: &Path, references: &Path, out: Option<&Path>) -> Result<i32> {
    let cands: Vec<SentencesLine> = read_jsonl(candidates)?;
    let refs: Vec<SentencesLine> = read_jsonl(references)?;
    let by_id: std::collections::HashMap<&str, &Vec<Tokens>> =
        refs.iter().map(|r| (r.id.as_str(), &r.sentences)).collect();
    let mut generated = Vec::with_capacity(cands.len());
    let mut matched = Vec::with_capacity(cands.len());
    for c in &cands {
        let r = by_id
            .get(c.id.as_str())
            .ok_or_else(|| Error::Domain(format!("no reference for `{}`", c.id)))?;
        generated.push(c.sentences.clone());
        matched.push((*r).clone());
    }
    let report = evaluate_reports(&generated, &matched)?;
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join(EVAL_FILE), format!("{json}\n"))?;
        let mut csv = String::from("id,bleu_1,bleu_4,rouge_l,cider_d,sentences\n");
        for (c, s) in cands.iter().zip(per_image_scores(&generated, &matched)?) {
            writeln!(
                csv,
                "{},{:?},{:?},{:?},{:?},{}",
                c.id, s.bleu_1, s.bleu_4, s.rouge_l, s.cider_d, s.sentences
            )
            .expect("String write");
        }
        write_file(&dir.join(PER_IMAGE_FILE), csv)?;
    }
    Ok(EXIT_OK)
}

fn cmd_gradcheck(common: &Common, eps: f64) -> Result<i32> {
    let cfg = resolve(TrainConfig::toy(), common)?;
    announce(&cfg);
    cfg.validate()?;
    let mut rng = Rng::seeded(cfg.seed);
    let store = init_params(&cfg, &mut rng);
    let ex = random_example(&cfg, &mut rng, "gradcheck", 2);
    let report = loss_gradient_check(&store, &cfg, &ex, eps)?;
    println!("max_rel_error {:e}", report.max_rel_error);
    if let Some((name, i)) = &report.worst {
        let (a, n) = report.worst_pair;
        eprintln!("worst scalar {name}[{i}] of {} checked: analytic {a:e}, numeric {n:e}", report.checked);
    }
    Ok(if report.max_rel_error < 1e-3 { EXIT_OK } else { EXIT_DIVERGENCE })
}

fn cmd_stats(common: &Common, corpus: &Path, out: Option<&Path>) -> Result<i32> {
    let cfg = resolve(TrainConfig::default(), common)?;
    announce(&cfg);
    let records: Vec<RawRecord> = read_jsonl(corpus)?;
    let docs: Vec<_> = text_documents(&records, cfg.tfidf_k).into_iter().map(|(_, d)| d).collect();
    let stats = corpus_stats(&docs, cfg.max_vocab)?;
    let json = serde_json::to_string_pretty(&stats)?;
    println!("{json}");
    if let Some(path) = out {
        write_file(path, format!("{json}\n"))?;
    }
    Ok(EXIT_OK)
}
