//! Command-line surface: train/eval/attend/hrr-demo/gradcheck/synth.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. Every
//! artifact is written atomically (write to a temporary file, then
//! rename), and every source of randomness flows from --seed flags, so
//! identical invocations produce identical outputs.

use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aflstm::autograd::{grad_check, NodeId, Tape};
use aflstm::checkpoint::{load_model, model_to_bytes, write_atomic};
use aflstm::data::{
    build_vocab, corpus_to_bytes, filter_binary, index_corpus, load_corpus, load_embeddings,
    make_dev_split, synth_generate, tokenize, Corpus, VocabSpec,
};
use aflstm::holo::FusionOperator;
use aflstm::hrr::capacity_experiment;
use aflstm::model::{EmbeddingTable, Model, ModelConfig, ModelVariant};
use aflstm::train::{evaluate, history_to_bytes, train, Metrics, TrainConfig};

// ── argument surface ──────────────────────────────────────────────────

#[derive(Parser)]
#[command(
    name = "aflstm",
    version,
    about = "Aspect-based sentiment models with word-aspect fusion attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, history and run manifest
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus
    Eval(EvalArgs),
    /// Print per-token attention weights for one sentence/aspect pair
    Attend(AttendArgs),
    /// Holographic-memory retrieval accuracy demo
    HrrDemo(HrrDemoArgs),
    /// Compare analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Generate the synthetic two-clause contrastive corpus
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// majority | nbow | lstm | at-lstm | atae-lstm | af-lstm
    #[arg(long)]
    variant: Option<String>,
    /// conv | corr | mul (af-lstm only)
    #[arg(long)]
    fusion: Option<String>,
    /// Training corpus (line-delimited records)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Held-out corpus evaluated with the best snapshot after training
    #[arg(long)]
    test_data: Option<PathBuf>,
    /// Pretrained embedding file (token followed by k numbers per line)
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Keep the embedding table fixed during training
    #[arg(long)]
    freeze_embeddings: bool,
    /// Drop neutral examples and train a 2-class model
    #[arg(long)]
    binary: bool,
    /// Hidden dimension
    #[arg(long, default_value_t = 300)]
    d: usize,
    /// Embedding dimension
    #[arg(long, default_value_t = 300)]
    k: usize,
    /// Sentences keep their first max-len tokens
    #[arg(long, default_value_t = 40)]
    max_len: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 25)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// L2 coefficient applied once per batch
    #[arg(long, default_value_t = 4e-6)]
    lambda: f64,
    /// Epochs without dev improvement before stopping (default min(10, epochs))
    #[arg(long)]
    patience: Option<usize>,
    /// Global gradient-norm ceiling
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    /// Dropout on the final representation
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Training examples moved into the dev split
    #[arg(long, default_value_t = 500)]
    dev_size: usize,
    /// Minimum token frequency for the vocabulary
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Combine the attentive representation with the last hidden state
    #[arg(long)]
    projection: bool,
    /// Clip hidden and aspect vectors onto the unit ball before fusing
    #[arg(long)]
    normalize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for checkpoint, history, split and manifest
    #[arg(long, default_value = "run-out")]
    out: PathBuf,
    /// Reproduce a previous run from its manifest (conflicts with model
    /// and data flags)
    #[arg(long)]
    from_manifest: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Drop neutral examples before evaluating
    #[arg(long)]
    binary: bool,
}

#[derive(Args)]
struct AttendArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    sentence: String,
    #[arg(long)]
    aspect: String,
    /// Emit one machine-readable JSON record instead of the table
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct HrrDemoArgs {
    /// Vector dimension
    #[arg(long, default_value_t = 512)]
    d: usize,
    /// Largest number of stored pairs to sweep to
    #[arg(long)]
    pairs: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    /// nbow | lstm | at-lstm | atae-lstm | af-lstm
    #[arg(long)]
    variant: String,
    /// conv | corr | mul (af-lstm only)
    #[arg(long)]
    fusion: Option<String>,
    /// Hidden dimension (at most 16; finite differences are slow)
    #[arg(long, default_value_t = 8)]
    d: usize,
    /// Embedding dimension (at most 16)
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Sequence length bound (at most 8)
    #[arg(long, default_value_t = 5)]
    max_len: usize,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of generated sentences (each yields two records)
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

// ── error discipline ──────────────────────────────────────────────────

enum CmdError {
    Usage(String),
    Runtime(String),
}

impl From<aflstm::Error> for CmdError {
    fn from(e: aflstm::Error) -> Self {
        CmdError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), CmdError>;

fn usage(msg: impl Into<String>) -> CmdError {
    CmdError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse(); // malformed flags exit 2 via clap
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Attend(args) => cmd_attend(args),
        Command::HrrDemo(args) => cmd_hrr_demo(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CmdError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

// ── shared helpers ────────────────────────────────────────────────────

fn class_name(index: usize) -> &'static str {
    match index {
        0 => "positive",
        1 => "negative",
        2 => "neutral",
        _ => "?",
    }
}

fn parse_variant(s: &str) -> Result<ModelVariant, CmdError> {
    s.parse::<ModelVariant>().map_err(|e| usage(e.to_string()))
}

fn parse_fusion(s: &str) -> Result<FusionOperator, CmdError> {
    s.parse::<FusionOperator>().map_err(|e| usage(e.to_string()))
}

fn load_corpus_reported(path: &Path) -> Result<Corpus, CmdError> {
    let (corpus, skipped) = load_corpus(path)?;
    println!(
        "{}: {} records{}",
        path.display(),
        corpus.len(),
        if skipped > 0 { format!(" ({skipped} skipped)") } else { String::new() }
    );
    Ok(corpus)
}

// ── run manifest ──────────────────────────────────────────────────────

const MANIFEST_FORMAT: &str = "aflstm-run-manifest";
const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize, Clone)]
struct DataSpec {
    train: String,
    test: Option<String>,
    embeddings: Option<String>,
    freeze_embeddings: bool,
    binary: bool,
    min_count: usize,
    dev_size: usize,
}

#[derive(Serialize, Deserialize)]
struct ArtifactPaths {
    checkpoint: String,
    history: String,
    split: String,
}

#[derive(Serialize, Deserialize)]
struct RunManifest {
    format: String,
    version: u32,
    tool_version: String,
    model: ModelConfig,
    train: TrainConfig,
    data: DataSpec,
    artifacts: ArtifactPaths,
}

// ── train ─────────────────────────────────────────────────────────────

struct ResolvedRun {
    model: ModelConfig,
    train: TrainConfig,
    data: DataSpec,
}

fn resolve_from_flags(args: &TrainArgs) -> Result<ResolvedRun, CmdError> {
    let variant = match &args.variant {
        Some(v) => parse_variant(v)?,
        None => return Err(usage("--variant is required (or use --from-manifest)")),
    };
    let data = match &args.data {
        Some(p) => p.to_string_lossy().into_owned(),
        None => return Err(usage("--data is required (or use --from-manifest)")),
    };
    let fusion = match &args.fusion {
        Some(f) => {
            if variant != ModelVariant::AfLstm {
                return Err(usage(format!("--fusion only applies to af-lstm, not {variant}")));
            }
            Some(parse_fusion(f)?)
        }
        None => {
            if variant == ModelVariant::AfLstm {
                return Err(usage("af-lstm requires --fusion conv|corr|mul"));
            }
            None
        }
    };
    let model = ModelConfig {
        variant,
        embed_dim: args.k,
        hidden_dim: args.d,
        max_len: args.max_len,
        num_classes: if args.binary { 2 } else { 3 },
        fusion,
        use_projection: args.projection,
        use_normalization: args.normalize,
        dropout_p: args.dropout,
        seed: args.seed,
    };
    model.validate().map_err(|e| usage(e.to_string()))?;
    let train = TrainConfig {
        learning_rate: args.lr,
        lambda_l2: args.lambda,
        batch_size: args.batch_size,
        max_epochs: args.epochs,
        patience: args.patience.unwrap_or_else(|| 10usize.min(args.epochs)),
        grad_clip_norm: args.clip,
        adam_beta1: 0.9,
        adam_beta2: 0.999,
        adam_eps: 1e-8,
        seed: args.seed,
    };
    train.validate().map_err(|e| usage(e.to_string()))?;
    Ok(ResolvedRun {
        model,
        train,
        data: DataSpec {
            train: data,
            test: args.test_data.as_ref().map(|p| p.to_string_lossy().into_owned()),
            embeddings: args.embeddings.as_ref().map(|p| p.to_string_lossy().into_owned()),
            freeze_embeddings: args.freeze_embeddings,
            binary: args.binary,
            min_count: args.min_count,
            dev_size: args.dev_size,
        },
    })
}

fn resolve_from_manifest(path: &Path) -> Result<ResolvedRun, CmdError> {
    let bytes = std::fs::read(path)?;
    let manifest: RunManifest = serde_json::from_slice(&bytes)
        .map_err(|e| CmdError::Runtime(format!("unreadable manifest {}: {e}", path.display())))?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
        return Err(CmdError::Runtime(format!(
            "unsupported manifest {}:{}",
            manifest.format, manifest.version
        )));
    }
    Ok(ResolvedRun {
        model: manifest.model,
        train: manifest.train,
        data: manifest.data,
    })
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let resolved = match &args.from_manifest {
        Some(path) => {
            if args.variant.is_some()
                || args.fusion.is_some()
                || args.data.is_some()
                || args.embeddings.is_some()
            {
                return Err(usage(
                    "--from-manifest conflicts with --variant/--fusion/--data/--embeddings",
                ));
            }
            resolve_from_manifest(path)?
        }
        None => resolve_from_flags(&args)?,
    };
    let ResolvedRun { model: model_cfg, train: train_cfg, data: data_spec } = resolved;

    std::fs::create_dir_all(&args.out)?;

    let corpus = load_corpus_reported(Path::new(&data_spec.train))?;
    let corpus = if data_spec.binary { filter_binary(&corpus)? } else { corpus };
    let (train_corpus, dev_corpus, split) =
        make_dev_split(&corpus, data_spec.dev_size, train_cfg.seed)?;
    println!("split: {} train / {} dev", train_corpus.len(), dev_corpus.len());

    // vocabulary is built after the dev split so dev stays held out
    let vocab = build_vocab(&[&train_corpus], data_spec.min_count);
    println!("vocab: {} tokens", vocab.len());

    let table = match &data_spec.embeddings {
        Some(path) => {
            // stream 3: model init uses 0, training shuffles 1, dropout 2
            let mut rng = ChaCha8Rng::seed_from_u64(model_cfg.seed);
            rng.set_stream(3);
            let (table, coverage) = load_embeddings(
                Path::new(path),
                &vocab,
                model_cfg.embed_dim,
                !data_spec.freeze_embeddings,
                &mut rng,
            )?;
            println!("embeddings: {:.1}% coverage", 100.0 * coverage);
            Some(table)
        }
        None if data_spec.freeze_embeddings => {
            let mut rng = ChaCha8Rng::seed_from_u64(model_cfg.seed);
            Some(EmbeddingTable::random(vocab.len(), model_cfg.embed_dim, false, &mut rng))
        }
        None => None,
    };

    let model = Model::new(model_cfg.clone(), vocab.len(), table)?;
    let counts = model.param_count();
    println!(
        "parameters: {} model + {} embedding",
        counts.model, counts.embedding
    );

    let train_set = index_corpus(&train_corpus, &vocab);
    let dev_set = index_corpus(&dev_corpus, &vocab);
    let out = train(model, &train_set, &dev_set, &train_cfg)?;

    for pair in out.history.chunks(2) {
        if let [tr, dv] = pair {
            println!(
                "epoch {:>3}: train acc {:.4} loss {:.4} | dev acc {:.4} loss {:.4}",
                tr.epoch, tr.accuracy, tr.loss, dv.accuracy, dv.loss
            );
        }
    }
    println!(
        "best dev accuracy: {:.4} (epoch {}{})",
        out.best_dev_accuracy,
        out.best_epoch,
        if out.stopped_early { ", stopped early" } else { "" }
    );

    if let Some(test_path) = &data_spec.test {
        let test_corpus = load_corpus_reported(Path::new(test_path))?;
        let test_corpus = if data_spec.binary { filter_binary(&test_corpus)? } else { test_corpus };
        let test_set = index_corpus(&test_corpus, &vocab);
        let metrics = evaluate(&out.model, &test_set, "test", out.best_epoch)?;
        println!("test accuracy: {:.4}", metrics.accuracy);
    }

    let checkpoint_path = args.out.join("checkpoint.json");
    let history_path = args.out.join("history.jsonl");
    let split_path = args.out.join("split.jsonl");
    let manifest_path = args.out.join("manifest.json");
    write_atomic(&checkpoint_path, &model_to_bytes(&out.model, &vocab)?)?;
    write_atomic(&history_path, &history_to_bytes(&out.history)?)?;
    write_atomic(&split_path, &split.to_bytes()?)?;

    let manifest = RunManifest {
        format: MANIFEST_FORMAT.to_string(),
        version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        model: model_cfg,
        train: train_cfg,
        data: data_spec,
        artifacts: ArtifactPaths {
            checkpoint: checkpoint_path.to_string_lossy().into_owned(),
            history: history_path.to_string_lossy().into_owned(),
            split: split_path.to_string_lossy().into_owned(),
        },
    };
    let mut manifest_bytes = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| CmdError::Runtime(e.to_string()))?;
    manifest_bytes.push(b'\n');
    write_atomic(&manifest_path, &manifest_bytes)?;

    println!("checkpoint: {}", checkpoint_path.display());
    println!("manifest: {}", manifest_path.display());
    Ok(())
}

// ── eval ──────────────────────────────────────────────────────────────

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let (model, vocab) = load_model(&args.checkpoint)?;
    let corpus = load_corpus_reported(&args.data)?;
    let corpus = if args.binary { filter_binary(&corpus)? } else { corpus };
    let dataset = index_corpus(&corpus, &vocab);
    let metrics = evaluate(&model, &dataset, "eval", 0)?;
    print_metrics(&metrics);
    Ok(())
}

fn print_metrics(metrics: &Metrics) {
    let total: usize = metrics.per_class_total.iter().sum();
    let correct: usize = metrics.per_class_correct.iter().sum();
    println!("accuracy: {:.4} ({correct}/{total})", metrics.accuracy);
    for (class, (&n, &c)) in metrics
        .per_class_total
        .iter()
        .zip(&metrics.per_class_correct)
        .enumerate()
    {
        println!("  {}: {c}/{n}", class_name(class));
    }
}

// ── attend ────────────────────────────────────────────────────────────

fn cmd_attend(args: AttendArgs) -> CmdResult {
    let sentence_tokens = tokenize(&args.sentence);
    let aspect_tokens = tokenize(&args.aspect);
    if sentence_tokens.is_empty() {
        return Err(usage("--sentence tokenizes to nothing"));
    }
    if aspect_tokens.is_empty() {
        return Err(usage("--aspect tokenizes to nothing"));
    }
    let (model, vocab) = load_model(&args.checkpoint)?;
    if !model.config().variant.has_attention() {
        return Err(CmdError::Runtime(format!(
            "variant {} produces no attention weights",
            model.config().variant
        )));
    }
    let sentence: Vec<usize> = sentence_tokens.iter().map(|t| vocab.lookup(t)).collect();
    let aspect: Vec<usize> = aspect_tokens.iter().map(|t| vocab.lookup(t)).collect();
    let pred = model.forward(&sentence, &aspect)?;
    let attention = pred.attention.as_ref().expect("attention variant");
    let kept = sentence_tokens.len().min(model.config().max_len);
    let weights = &attention.data()[..kept];
    let predicted = class_name(pred.predicted_class());

    if args.json {
        #[derive(Serialize)]
        struct Record<'a> {
            tokens: &'a [String],
            weights: &'a [f64],
            aspect: &'a [String],
            predicted: &'a str,
        }
        let record = Record {
            tokens: &sentence_tokens[..kept],
            weights,
            aspect: &aspect_tokens,
            predicted,
        };
        let line = serde_json::to_string(&record).map_err(|e| CmdError::Runtime(e.to_string()))?;
        println!("{line}");
        return Ok(());
    }

    let width = sentence_tokens[..kept].iter().map(|t| t.len()).max().unwrap_or(1);
    for (token, w) in sentence_tokens[..kept].iter().zip(weights) {
        println!("{token:<width$}  {w:.4}");
    }
    if sentence_tokens.len() > kept {
        println!(
            "({} tokens beyond max-len {} dropped)",
            sentence_tokens.len() - kept,
            model.config().max_len
        );
    }
    println!("predicted: {predicted}");
    Ok(())
}

// ── hrr demo ──────────────────────────────────────────────────────────

fn cmd_hrr_demo(args: HrrDemoArgs) -> CmdResult {
    if args.pairs == 0 {
        return Err(usage("--pairs must be at least 1"));
    }
    if args.d == 0 || args.trials == 0 {
        return Err(usage("--d and --trials must be at least 1"));
    }
    println!("d={} trials={} seed={}", args.d, args.trials, args.seed);
    println!("{:>6}  {:>8}", "pairs", "accuracy");
    let ladder = [1usize, 2, 5, 10, 20, 50, 100, 200, 500];
    let mut sweep: Vec<usize> = ladder.iter().copied().filter(|&p| p < args.pairs).collect();
    sweep.push(args.pairs);
    for pairs in sweep {
        let accuracy = capacity_experiment(args.d, pairs, args.trials, args.seed)?;
        println!("{pairs:>6}  {accuracy:>8.3}");
    }
    Ok(())
}

// ── gradcheck ─────────────────────────────────────────────────────────

fn cmd_gradcheck(args: GradcheckArgs) -> CmdResult {
    let variant = parse_variant(&args.variant)?;
    if variant == ModelVariant::Majority {
        return Err(usage("the majority baseline has no gradients to check"));
    }
    if args.d > 16 || args.k > 16 {
        return Err(usage("gradcheck dims are capped at 16 (finite differences are quadratic)"));
    }
    if args.max_len > 8 {
        return Err(usage("gradcheck max-len is capped at 8"));
    }
    let fusion = match (&args.fusion, variant) {
        (Some(f), ModelVariant::AfLstm) => Some(parse_fusion(f)?),
        (Some(_), other) => {
            return Err(usage(format!("--fusion only applies to af-lstm, not {other}")))
        }
        (None, ModelVariant::AfLstm) => Some(FusionOperator::Conv),
        (None, _) => None,
    };
    let config = ModelConfig {
        variant,
        embed_dim: args.k,
        hidden_dim: args.d,
        max_len: args.max_len,
        num_classes: 3,
        fusion,
        use_projection: false,
        use_normalization: variant == ModelVariant::AfLstm,
        dropout_p: 0.0,
        seed: args.seed,
    };
    let vocab_size = 12usize;
    let model = Model::new(config, vocab_size, None)?;
    let n = args.max_len.min(5);
    let sentence: Vec<usize> = (0..n).map(|i| 2 + (i % 9)).collect();
    let aspect = vec![7usize, 3];
    let label = 1usize;
    let lambda = 4e-6;

    if !(args.eps > 0.0) || args.eps > 0.1 {
        return Err(usage("--eps must lie in (0, 0.1]"));
    }
    let mut params = model.params().clone();
    let max_err = grad_check(&mut params, args.eps, |p| {
        let mut tape = Tape::new();
        let pass = model.build_forward(p, &mut tape, &sentence, &aspect, None)?;
        let nll = tape.nll(pass.probs, label)?;
        let mut reg: Option<NodeId> = None;
        let trainable: Vec<_> = p.ids().filter(|&id| p.get(id).trainable()).collect();
        for id in trainable {
            let sq = tape.param_sum_squares(p, id);
            reg = Some(match reg {
                Some(acc) => tape.add(acc, sq)?,
                None => sq,
            });
        }
        let reg = tape.scale(reg.expect("trainable parameters exist"), lambda);
        let total = tape.add(nll, reg)?;
        Ok((tape, total))
    })?;

    println!("max relative gradient error: {max_err:.3e}");
    if max_err < 1e-4 {
        Ok(())
    } else {
        Err(CmdError::Runtime(format!(
            "gradient check failed: {max_err:.3e} >= 1e-4"
        )))
    }
}

// ── synth ─────────────────────────────────────────────────────────────

fn cmd_synth(args: SynthArgs) -> CmdResult {
    if args.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let corpus = synth_generate(args.n, &VocabSpec::default(), args.seed)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_atomic(&args.out, &corpus_to_bytes(&corpus)?)?;
    let counts = corpus.class_counts();
    println!(
        "{} records: positive {}, negative {}, neutral {}",
        corpus.len(),
        counts[0],
        counts[1],
        counts[2]
    );
    println!("written: {}", args.out.display());
    Ok(())
}
