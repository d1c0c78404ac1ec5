//! Corpus ingestion and preparation: tokenization, the line-delimited
//! corpus format, vocabulary construction, pretrained embedding loading,
//! seeded dev splits, binary filtering, and the synthetic two-clause
//! contrastive corpus used to probe aspect sensitivity.
//!
//! Corpus files hold one JSON record per line with exactly the fields
//! `sentence`, `aspect` and `label` ("positive" / "negative" /
//! "neutral"), UTF-8 encoded.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{EmbeddingTable, PAD_INDEX, UNK_INDEX};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

// ── domain types ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    Neutral,
}

impl Label {
    /// Class index used for training targets; after binary filtering the
    /// surviving labels keep these indices, giving the 2-class space
    /// {positive: 0, negative: 1}.
    pub fn index(self) -> usize {
        match self {
            Label::Positive => 0,
            Label::Negative => 1,
            Label::Neutral => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
            Label::Neutral => "neutral",
        }
    }

    fn parse(s: &str, line: usize) -> Result<Label> {
        match s {
            "positive" => Ok(Label::Positive),
            "negative" => Ok(Label::Negative),
            "neutral" => Ok(Label::Neutral),
            other => Err(Error::Label { line, label: other.to_string() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Aspect terms appear verbatim in the sentence.
    Term,
    /// Aspect categories may name concepts outside the sentence text.
    Category,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub sentence_tokens: Vec<String>,
    pub aspect_tokens: Vec<String>,
    pub label: Label,
}

impl Example {
    pub fn new(sentence_tokens: Vec<String>, aspect_tokens: Vec<String>, label: Label) -> Result<Example> {
        if sentence_tokens.is_empty() || aspect_tokens.is_empty() {
            return Err(Error::Data("example with empty sentence or aspect".into()));
        }
        Ok(Example { sentence_tokens, aspect_tokens, label })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub examples: Vec<Example>,
    pub task_kind: TaskKind,
    pub name: String,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Per-class example counts indexed by `Label::index`.
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for ex in &self.examples {
            counts[ex.label.index()] += 1;
        }
        counts
    }
}

/// An example mapped through a vocabulary, ready for the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedExample {
    pub sentence: Vec<usize>,
    pub aspect: Vec<usize>,
    pub label: usize,
}

// ── tokenization ──────────────────────────────────────────────────────

/// Lowercases and splits into maximal alphanumeric runs; every other
/// character separates tokens and is dropped. Idempotent on its own
/// output rejoined with spaces.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in lower.chars() {
        if ch.is_alphanumeric() {
            current.push(ch);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

// ── corpus file format ────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct RawRecord {
    sentence: String,
    aspect: String,
    label: String,
}

/// Reads a line-delimited corpus. Records whose sentence or aspect
/// tokenizes to nothing are skipped; the count of skipped records is
/// returned alongside. Line numbers in errors are 1-based.
pub fn load_corpus(path: &Path) -> Result<(Corpus, usize)> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut examples = Vec::new();
    let mut skipped = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
        let label = Label::parse(&raw.label, lineno)?;
        let sentence_tokens = tokenize(&raw.sentence);
        let aspect_tokens = tokenize(&raw.aspect);
        if sentence_tokens.is_empty() || aspect_tokens.is_empty() {
            skipped += 1;
            continue;
        }
        examples.push(Example { sentence_tokens, aspect_tokens, label });
    }
    if examples.is_empty() {
        return Err(Error::Data(format!(
            "no usable records in {} ({skipped} skipped)",
            path.display()
        )));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    Ok((Corpus { examples, task_kind: TaskKind::Term, name }, skipped))
}

/// The corpus in its line-delimited file format, token lists rejoined
/// with single spaces; `load_corpus` round-trips it exactly.
pub fn corpus_to_bytes(corpus: &Corpus) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for ex in &corpus.examples {
        let raw = RawRecord {
            sentence: ex.sentence_tokens.join(" "),
            aspect: ex.aspect_tokens.join(" "),
            label: ex.label.as_str().to_string(),
        };
        serde_json::to_writer(&mut out, &raw)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&corpus_to_bytes(corpus)?)?;
    Ok(())
}

// ── vocabulary ────────────────────────────────────────────────────────

/// Dense token index with reserved entries 0 (padding) and 1 (unknown).
/// Lookup never fails; unseen tokens map to the unknown index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its ordered token list (as stored in
    /// checkpoints). The two reserved entries must lead the list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocabulary> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Data(format!(
                "token list must start with {PAD_TOKEN:?}, {UNK_TOKEN:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate token {t:?} in vocabulary")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved entries are always present
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(|s| s.as_str())
    }
}

/// Indexes every token that reaches `min_count` occurrences across the
/// given corpora (sentences and aspects both count), in first-appearance
/// order after the reserved entries.
pub fn build_vocab(corpora: &[&Corpus], min_count: usize) -> Vocabulary {
    let min_count = min_count.max(1);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for corpus in corpora {
        for ex in &corpus.examples {
            for tok in ex.sentence_tokens.iter().chain(&ex.aspect_tokens) {
                let c = counts.entry(tok).or_insert(0);
                if *c == 0 {
                    order.push(tok);
                }
                *c += 1;
            }
        }
    }
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(
        order
            .into_iter()
            .filter(|t| counts[t] >= min_count)
            .map(str::to_string),
    );
    Vocabulary::from_tokens(tokens).expect("reserved entries present, no duplicates")
}

/// Maps an example's tokens and label through the vocabulary.
pub fn index_example(ex: &Example, vocab: &Vocabulary) -> IndexedExample {
    IndexedExample {
        sentence: ex.sentence_tokens.iter().map(|t| vocab.lookup(t)).collect(),
        aspect: ex.aspect_tokens.iter().map(|t| vocab.lookup(t)).collect(),
        label: ex.label.index(),
    }
}

pub fn index_corpus(corpus: &Corpus, vocab: &Vocabulary) -> Vec<IndexedExample> {
    corpus.examples.iter().map(|ex| index_example(ex, vocab)).collect()
}

// ── pretrained embeddings ─────────────────────────────────────────────

/// Reads `<token> v1 .. vk` lines and fills rows for in-vocabulary
/// tokens; uncovered tokens keep a fresh normal(0, 0.1) row, the padding
/// row stays zero. Returns the table and the covered fraction of
/// non-reserved vocabulary tokens.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    k: usize,
    trainable: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(EmbeddingTable, f64)> {
    let mut table = EmbeddingTable::random(vocab.len(), k, trainable, rng);
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut covered = vec![false; vocab.len()];
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().ok_or_else(|| Error::Parse {
            line: lineno,
            msg: "missing token".into(),
        })?;
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("bad number {p:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != k {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {k} values, found {}", values.len()),
            });
        }
        // lookup falls back to the unknown index; only write rows whose
        // token is literally present, and never touch the padding row
        let ix = vocab.lookup(token);
        if vocab.token(ix) == Some(token) && ix != PAD_INDEX {
            table.values.row_mut(ix).copy_from_slice(&values);
            covered[ix] = true;
        }
    }
    let real = vocab.len().saturating_sub(2);
    let coverage = if real == 0 {
        0.0
    } else {
        covered[2..].iter().filter(|&&c| c).count() as f64 / real as f64
    };
    Ok((table, coverage))
}

// ── splits and filtering ──────────────────────────────────────────────

/// Original-example indices of a dev split, both sides sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train_indices: Vec<usize>,
    pub dev_indices: Vec<usize>,
}

impl SplitManifest {
    /// One JSON record per line: {"split": "...", "index": n}.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        #[derive(Serialize)]
        struct Row<'a> {
            split: &'a str,
            index: usize,
        }
        let mut out = Vec::new();
        for (split, indices) in [("train", &self.train_indices), ("dev", &self.dev_indices)] {
            for &index in indices {
                serde_json::to_writer(&mut out, &Row { split, index })?;
                out.push(b'\n');
            }
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }
}

/// Removes a seeded uniform sample of `n` examples into a dev corpus.
/// Both outputs preserve the original relative order; the manifest
/// records which original positions went where.
pub fn make_dev_split(train: &Corpus, n: usize, seed: u64) -> Result<(Corpus, Corpus, SplitManifest)> {
    if n >= train.len() {
        return Err(Error::Size { requested: n, available: train.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let mut dev_indices: Vec<usize> = order[..n].to_vec();
    let mut train_indices: Vec<usize> = order[n..].to_vec();
    dev_indices.sort_unstable();
    train_indices.sort_unstable();
    let pick = |ixs: &[usize], suffix: &str| Corpus {
        examples: ixs.iter().map(|&i| train.examples[i].clone()).collect(),
        task_kind: train.task_kind,
        name: format!("{}-{suffix}", train.name),
    };
    let train_out = pick(&train_indices, "train");
    let dev_out = pick(&dev_indices, "dev");
    Ok((train_out, dev_out, SplitManifest { train_indices, dev_indices }))
}

/// Drops neutral examples. The surviving labels form the 2-class space
/// {positive: 0, negative: 1} under `Label::index`.
pub fn filter_binary(corpus: &Corpus) -> Result<Corpus> {
    let examples: Vec<Example> = corpus
        .examples
        .iter()
        .filter(|ex| ex.label != Label::Neutral)
        .cloned()
        .collect();
    if examples.is_empty() {
        return Err(Error::Data(format!(
            "corpus {:?} has no positive or negative examples",
            corpus.name
        )));
    }
    Ok(Corpus {
        examples,
        task_kind: corpus.task_kind,
        name: format!("{}-binary", corpus.name),
    })
}

// ── synthetic contrastive corpus ──────────────────────────────────────

/// Word lists for the two-clause template. Every entry must be a single
/// lowercase alphanumeric token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSpec {
    pub aspects: Vec<String>,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

impl Default for VocabSpec {
    fn default() -> Self {
        let v = |words: &[&str]| words.iter().map(|w| w.to_string()).collect();
        VocabSpec {
            aspects: v(&[
                "appetizers",
                "service",
                "staff",
                "pizza",
                "battery",
                "keyboard",
                "screen",
                "price",
            ]),
            positive: v(&["okay", "great", "tasty", "friendly", "fast", "sturdy"]),
            negative: v(&["slow", "terrible", "bland", "rude", "noisy", "flimsy"]),
        }
    }
}

impl VocabSpec {
    fn validate(&self) -> Result<()> {
        if self.aspects.len() < 2 || self.positive.len() < 2 || self.negative.len() < 2 {
            return Err(Error::Config(
                "need at least 2 aspects and 2 adjectives per polarity".into(),
            ));
        }
        for w in self.aspects.iter().chain(&self.positive).chain(&self.negative) {
            if tokenize(w) != vec![w.clone()] {
                return Err(Error::Config(format!(
                    "word {w:?} is not a single lowercase alphanumeric token"
                )));
            }
        }
        Ok(())
    }
}

/// Generates `num_sentences` instances of the template
/// "the A1 is J1 but the A2 is J2" with distinct aspects and
/// opposite-polarity adjectives. Each sentence yields two examples, one
/// per aspect, labeled by that aspect's clause; identical sentences thus
/// carry opposite labels and aspect-blind models top out at chance.
/// Class balance is exactly 50/50.
pub fn synth_generate(num_sentences: usize, spec: &VocabSpec, seed: u64) -> Result<Corpus> {
    if num_sentences == 0 {
        return Err(Error::Config("num_sentences must be >= 1".into()));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |list: &[String], rng: &mut ChaCha8Rng| -> String {
        list[rng.random_range(0..list.len())].clone()
    };
    let mut examples = Vec::with_capacity(2 * num_sentences);
    for _ in 0..num_sentences {
        let a1 = pick(&spec.aspects, &mut rng);
        let a2 = loop {
            let cand = pick(&spec.aspects, &mut rng);
            if cand != a1 {
                break cand;
            }
        };
        let first_positive: bool = rng.random();
        let (j1, l1, j2, l2) = if first_positive {
            (pick(&spec.positive, &mut rng), Label::Positive, pick(&spec.negative, &mut rng), Label::Negative)
        } else {
            (pick(&spec.negative, &mut rng), Label::Negative, pick(&spec.positive, &mut rng), Label::Positive)
        };
        let sentence: Vec<String> = ["the", &a1, "is", &j1, "but", "the", &a2, "is", &j2]
            .iter()
            .map(|s| s.to_string())
            .collect();
        examples.push(Example { sentence_tokens: sentence.clone(), aspect_tokens: vec![a1], label: l1 });
        examples.push(Example { sentence_tokens: sentence, aspect_tokens: vec![a2], label: l2 });
    }
    Ok(Corpus { examples, task_kind: TaskKind::Term, name: "synth".into() })
}
