//! The model family: majority-class, neural bag of words, plain LSTM,
//! attention LSTM with aspect concatenation (at-lstm), its variant with
//! the aspect also appended to every LSTM input (atae-lstm), and the
//! word-aspect fusion model (af-lstm) whose attention scores are
//! computed over M_i = h_i ∘ s for a parameterless association operator
//! ∘ ∈ {circular convolution, circular correlation, Hadamard}.
//!
//! Layout conventions: sequences are stored L×d (row per timestep);
//! the embedding table is stored with one row per token, row 0 being the
//! all-zero frozen padding row; sequences longer than max_len keep their
//! first max_len tokens; shorter ones are padded at the end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::autograd::{NodeId, ParamId, ParamSet, Tape};
use crate::error::{Error, Result};
use crate::holo::FusionOperator;
use crate::tensor::Tensor;

/// Reserved token index for padding; its embedding row is zero and never
/// trained.
pub const PAD_INDEX: usize = 0;
/// Reserved token index for out-of-vocabulary tokens.
pub const UNK_INDEX: usize = 1;

const INIT_RANGE: f64 = 0.08;
const EMBED_STDDEV: f64 = 0.1;

// ── configuration ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    Majority,
    Nbow,
    Lstm,
    AtLstm,
    AtaeLstm,
    AfLstm,
}

impl ModelVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::Majority => "majority",
            ModelVariant::Nbow => "nbow",
            ModelVariant::Lstm => "lstm",
            ModelVariant::AtLstm => "at-lstm",
            ModelVariant::AtaeLstm => "atae-lstm",
            ModelVariant::AfLstm => "af-lstm",
        }
    }

    /// Variants that produce an attention vector.
    pub fn has_attention(self) -> bool {
        matches!(self, ModelVariant::AtLstm | ModelVariant::AtaeLstm | ModelVariant::AfLstm)
    }

    pub fn has_lstm(self) -> bool {
        !matches!(self, ModelVariant::Majority | ModelVariant::Nbow)
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "majority" => ModelVariant::Majority,
            "nbow" => ModelVariant::Nbow,
            "lstm" => ModelVariant::Lstm,
            "at-lstm" => ModelVariant::AtLstm,
            "atae-lstm" => ModelVariant::AtaeLstm,
            "af-lstm" => ModelVariant::AfLstm,
            other => {
                return Err(Error::Config(format!(
                    "unknown variant {other:?} (expected majority, nbow, lstm, at-lstm, atae-lstm or af-lstm)"
                )))
            }
        })
    }
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    /// k: word embedding dimension.
    pub embed_dim: usize,
    /// d: LSTM hidden dimension.
    pub hidden_dim: usize,
    /// L: maximum sequence length (truncation keeps the first L tokens).
    pub max_len: usize,
    /// K: number of polarity classes, 2 or 3.
    pub num_classes: usize,
    /// Association operator; present exactly when variant is af-lstm.
    pub fusion: Option<FusionOperator>,
    /// tanh projection combining the attentive representation with the
    /// last hidden state.
    pub use_projection: bool,
    /// Clip ‖h_i‖ and ‖s‖ to ≤ 1 before fusing (af-lstm only).
    pub use_normalization: bool,
    /// Inverted dropout on the final representation at train time.
    pub dropout_p: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.max_len == 0 {
            return Err(Error::Config("embed_dim, hidden_dim and max_len must be >= 1".into()));
        }
        if !(self.num_classes == 2 || self.num_classes == 3) {
            return Err(Error::Config(format!(
                "num_classes must be 2 or 3, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        let is_af = self.variant == ModelVariant::AfLstm;
        if is_af != self.fusion.is_some() {
            return Err(Error::Config(
                "fusion must be set for af-lstm and absent for every other variant".into(),
            ));
        }
        if self.use_projection && !self.variant.has_attention() {
            return Err(Error::Config(
                "projection requires an attention variant".into(),
            ));
        }
        if self.use_normalization && !is_af {
            return Err(Error::Config(
                "normalization applies to the association layer, af-lstm only".into(),
            ));
        }
        Ok(())
    }

    /// LSTM input width: the aspect is concatenated to every input for
    /// atae-lstm, doubling it.
    pub fn lstm_input_dim(&self) -> usize {
        if self.variant == ModelVariant::AtaeLstm {
            2 * self.embed_dim
        } else {
            self.embed_dim
        }
    }

    /// Width of the attention features M_i.
    pub fn attention_dim(&self) -> usize {
        match self.variant {
            ModelVariant::AfLstm => self.hidden_dim,
            // h_i concatenated with the projected aspect
            _ => 2 * self.hidden_dim,
        }
    }

    /// Dimension of the representation fed to the classifier.
    pub fn repr_dim(&self) -> usize {
        if self.variant == ModelVariant::Nbow {
            self.embed_dim
        } else {
            self.hidden_dim
        }
    }
}

// ── embedding table ───────────────────────────────────────────────────

/// Token embeddings, one row per token; row `PAD_INDEX` is all-zero and
/// frozen regardless of the trainable flag.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub values: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn random(vocab_size: usize, embed_dim: usize, trainable: bool, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, EMBED_STDDEV).expect("valid stddev");
        let mut values = Tensor::zeros(vec![vocab_size, embed_dim]);
        for i in 1..vocab_size {
            for v in values.row_mut(i) {
                *v = normal.sample(rng);
            }
        }
        EmbeddingTable { values, trainable }
    }

    pub fn vocab_size(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }
}

// ── parameter layout ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub(crate) struct LstmIds {
    pub w_i: ParamId,
    pub b_i: ParamId,
    pub w_f: ParamId,
    pub b_f: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
    pub w_c: ParamId,
    pub b_c: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnIds {
    /// Aspect projection feeding the concatenation (at-lstm family only).
    pub w_v: Option<ParamId>,
    pub w_y: ParamId,
    pub w: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ProjIds {
    pub w_p: ParamId,
    pub w_x: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ClfIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug)]
pub struct Model {
    pub(crate) config: ModelConfig,
    pub(crate) vocab_size: usize,
    pub(crate) params: ParamSet,
    pub(crate) embedding: Option<ParamId>,
    pub(crate) lstm: Option<LstmIds>,
    /// Linear map sizing the aspect embedding to the hidden dimension;
    /// allocated only for af-lstm when k differs from d.
    pub(crate) aspect_map: Option<ParamId>,
    pub(crate) attention: Option<AttnIds>,
    pub(crate) projection: Option<ProjIds>,
    pub(crate) classifier: Option<ClfIds>,
    pub(crate) majority_class: Option<usize>,
}

fn uniform_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-INIT_RANGE..INIT_RANGE)).collect();
    Tensor::from_vec(shape, data).expect("consistent shape")
}

impl Model {
    /// Builds and initializes a model. Weight matrices start uniform in
    /// ±0.08, biases at zero except the forget-gate bias at 1.0, and the
    /// embedding table (when not supplied) normal with stddev 0.1.
    pub fn new(
        config: ModelConfig,
        vocab_size: usize,
        pretrained: Option<EmbeddingTable>,
    ) -> Result<Model> {
        config.validate()?;
        if vocab_size < 2 {
            return Err(Error::Config(format!(
                "vocabulary must include padding and unknown entries, got size {vocab_size}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let (k, d) = (config.embed_dim, config.hidden_dim);

        if config.variant == ModelVariant::Majority {
            return Ok(Model {
                config,
                vocab_size,
                params,
                embedding: None,
                lstm: None,
                aspect_map: None,
                attention: None,
                projection: None,
                classifier: None,
                majority_class: None,
            });
        }

        let table = match pretrained {
            Some(t) => {
                if t.vocab_size() != vocab_size || t.dim() != k {
                    return Err(Error::Config(format!(
                        "embedding table is {}x{}, model expects {vocab_size}x{k}",
                        t.vocab_size(),
                        t.dim()
                    )));
                }
                if t.values.row(PAD_INDEX).iter().any(|&v| v != 0.0) {
                    return Err(Error::Config("padding row of embedding table must be zero".into()));
                }
                t
            }
            None => EmbeddingTable::random(vocab_size, k, true, &mut rng),
        };
        let embedding = Some(params.add("embedding", table.values, table.trainable));

        let lstm = if config.variant.has_lstm() {
            let zin = config.lstm_input_dim() + d;
            let gate = |name: &str, forget: bool, params: &mut ParamSet, rng: &mut ChaCha8Rng| {
                let w = params.add(&format!("lstm.w_{name}"), uniform_tensor(vec![d, zin], rng), true);
                let mut bias = Tensor::zeros(vec![d]);
                if forget {
                    bias.fill(1.0); // open the forget gate at the start
                }
                let b = params.add(&format!("lstm.b_{name}"), bias, true);
                (w, b)
            };
            let (w_i, b_i) = gate("i", false, &mut params, &mut rng);
            let (w_f, b_f) = gate("f", true, &mut params, &mut rng);
            let (w_o, b_o) = gate("o", false, &mut params, &mut rng);
            let (w_c, b_c) = gate("c", false, &mut params, &mut rng);
            Some(LstmIds { w_i, b_i, w_f, b_f, w_o, b_o, w_c, b_c })
        } else {
            None
        };

        let aspect_map = if config.variant == ModelVariant::AfLstm && k != d {
            Some(params.add("aspect_map", uniform_tensor(vec![d, k], &mut rng), true))
        } else {
            None
        };

        let attention = if config.variant.has_attention() {
            let da = config.attention_dim();
            let w_v = if config.variant == ModelVariant::AfLstm {
                None
            } else {
                Some(params.add("attn.w_v", uniform_tensor(vec![d, k], &mut rng), true))
            };
            let w_y = params.add("attn.w_y", uniform_tensor(vec![da, da], &mut rng), true);
            let w = params.add("attn.w", uniform_tensor(vec![da], &mut rng), true);
            Some(AttnIds { w_v, w_y, w })
        } else {
            None
        };

        let projection = if config.use_projection {
            let w_p = params.add("proj.w_p", uniform_tensor(vec![d, d], &mut rng), true);
            let w_x = params.add("proj.w_x", uniform_tensor(vec![d, d], &mut rng), true);
            Some(ProjIds { w_p, w_x })
        } else {
            None
        };

        let dr = config.repr_dim();
        let classifier = Some(ClfIds {
            w: params.add("clf.w", uniform_tensor(vec![config.num_classes, dr], &mut rng), true),
            b: params.add("clf.b", Tensor::zeros(vec![config.num_classes]), true),
        });

        Ok(Model {
            config,
            vocab_size,
            params,
            embedding,
            lstm,
            aspect_map,
            attention,
            projection,
            classifier,
            majority_class: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn majority_class(&self) -> Option<usize> {
        self.majority_class
    }

    pub fn set_majority_class(&mut self, class: usize) -> Result<()> {
        if class >= self.config.num_classes {
            return Err(Error::Contract(format!(
                "majority class {class} outside {} classes",
                self.config.num_classes
            )));
        }
        self.majority_class = Some(class);
        Ok(())
    }

    /// Trainable scalar counts: `model` excludes the embedding table,
    /// `embedding` is the table minus its frozen padding row (zero when
    /// the table itself is frozen).
    pub fn param_count(&self) -> ParamCount {
        let mut model = 0usize;
        let mut embedding = 0usize;
        for (i, p) in self.params.iter().enumerate() {
            if !p.trainable() {
                continue;
            }
            if self.embedding.is_some() && i == 0 {
                let rows = p.value().rows();
                let cols = p.value().cols();
                embedding = (rows - 1) * cols;
            } else {
                model += p.value().len();
            }
        }
        ParamCount { model, embedding }
    }

    // ── forward construction ──────────────────────────────────────────

    /// Records the differentiable forward pass for one example on the
    /// tape. `params` is usually `self.params()`, but gradient checking
    /// passes a perturbed clone; the id layout is identical.
    ///
    /// `dropout_mask`, when given, multiplies the final representation
    /// (entries 0 or 1/(1−p)); pass None for evaluation.
    pub fn build_forward(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        sentence: &[usize],
        aspect: &[usize],
        dropout_mask: Option<&[f64]>,
    ) -> Result<ForwardPass> {
        if self.config.variant == ModelVariant::Majority {
            return Err(Error::Capability(
                "majority model has no differentiable forward pass".into(),
            ));
        }
        if sentence.is_empty() {
            return Err(Error::Contract("empty sentence".into()));
        }
        if aspect.is_empty() {
            return Err(Error::Contract("empty aspect".into()));
        }
        let cfg = &self.config;
        let l = cfg.max_len;
        let n = sentence.len().min(l);
        let kept = &sentence[..n];
        let embedding = self.embedding.expect("non-majority model has embeddings");
        let clf = self.classifier.expect("non-majority model has a classifier");

        let x = tape.embed_rows(params, embedding, kept)?;

        // bag-of-words aspect embedding: plain sum of rows
        let aspect_sum = |tape: &mut Tape| -> Result<NodeId> {
            let rows = tape.embed_rows(params, embedding, aspect)?;
            let ones = tape.leaf(Tensor::vector(vec![1.0; aspect.len()]));
            tape.row_weighted_sum(rows, ones)
        };

        let (repr, attention, h_last) = match cfg.variant {
            ModelVariant::Nbow => {
                let ones = tape.leaf(Tensor::vector(vec![1.0; n]));
                let sum = tape.row_weighted_sum(x, ones)?;
                (sum, None, None)
            }
            ModelVariant::Lstm => {
                let gates = self.lstm_nodes(params, tape);
                let x_rows = split_rows(tape, x, n)?;
                let states = lstm_forward(tape, &gates, &x_rows, cfg.hidden_dim)?;
                let h_last = *states.last().expect("n >= 1");
                (h_last, None, Some(h_last))
            }
            ModelVariant::AtLstm | ModelVariant::AtaeLstm | ModelVariant::AfLstm => {
                let s_k = aspect_sum(tape)?;
                let gates = self.lstm_nodes(params, tape);
                let mut x_rows = split_rows(tape, x, n)?;
                if cfg.variant == ModelVariant::AtaeLstm {
                    for r in &mut x_rows {
                        *r = tape.concat(*r, s_k)?;
                    }
                }
                let states = lstm_forward(tape, &gates, &x_rows, cfg.hidden_dim)?;
                let h_last = *states.last().expect("n >= 1");
                // pad positions repeat the last real state; the mask
                // removes them from the attention support
                let mut h_rows = states.clone();
                h_rows.resize(l, h_last);
                let mut mask = vec![true; n];
                mask.resize(l, false);
                let h = tape.stack_rows(&h_rows)?;

                let attn = self.attention.expect("attention variant");
                let m = match cfg.variant {
                    ModelVariant::AfLstm => {
                        let s_d = match self.aspect_map {
                            Some(am) => {
                                let amn = tape.param(params, am);
                                tape.matmul(amn, s_k)?
                            }
                            None => s_k,
                        };
                        let fused = fuse(
                            tape,
                            &h_rows,
                            s_d,
                            cfg.fusion.expect("af-lstm has a fusion operator"),
                            cfg.use_normalization,
                        )?;
                        tape.stack_rows(&fused)?
                    }
                    _ => {
                        let w_v = tape.param(params, attn.w_v.expect("at-family aspect projection"));
                        let vs = tape.matmul(w_v, s_k)?;
                        let rows: Vec<NodeId> = h_rows
                            .iter()
                            .map(|&h_i| tape.concat(h_i, vs))
                            .collect::<Result<_>>()?;
                        tape.stack_rows(&rows)?
                    }
                };

                let w_y = tape.param(params, attn.w_y);
                let w = tape.param(params, attn.w);
                let (r, a) = attend(tape, m, h, &mask, w_y, w)?;
                (r, Some(a), Some(h_last))
            }
            ModelVariant::Majority => unreachable!(),
        };

        let repr = match (self.projection, h_last) {
            (Some(proj), Some(h_last)) => {
                let w_p = tape.param(params, proj.w_p);
                let w_x = tape.param(params, proj.w_x);
                project(tape, repr, h_last, w_p, w_x)?
            }
            _ => repr,
        };

        let repr = match dropout_mask {
            Some(mask) => tape.dropout(repr, mask)?,
            None => repr,
        };

        let w_f = tape.param(params, clf.w);
        let b_f = tape.param(params, clf.b);
        let probs = classify(tape, repr, w_f, b_f)?;
        Ok(ForwardPass { probs, attention })
    }

    fn lstm_nodes(&self, params: &ParamSet, tape: &mut Tape) -> LstmGateNodes {
        let ids = self.lstm.expect("variant with an LSTM");
        LstmGateNodes {
            w_i: tape.param(params, ids.w_i),
            b_i: tape.param(params, ids.b_i),
            w_f: tape.param(params, ids.w_f),
            b_f: tape.param(params, ids.b_f),
            w_o: tape.param(params, ids.w_o),
            b_o: tape.param(params, ids.b_o),
            w_c: tape.param(params, ids.w_c),
            b_c: tape.param(params, ids.b_c),
        }
    }

    /// Inference forward: fresh tape, no dropout. Returns class
    /// probabilities and, for attention variants, the attention weights
    /// over the padded length L (zero at padding).
    pub fn forward(&self, sentence: &[usize], aspect: &[usize]) -> Result<Prediction> {
        if self.config.variant == ModelVariant::Majority {
            let class = self.majority_class.ok_or_else(|| {
                Error::Contract("majority model not fitted; train it first".into())
            })?;
            let mut probs = Tensor::zeros(vec![self.config.num_classes]);
            probs.data_mut()[class] = 1.0;
            return Ok(Prediction { probs, attention: None });
        }
        let mut tape = Tape::new();
        let pass = self.build_forward(&self.params, &mut tape, sentence, aspect, None)?;
        Ok(Prediction {
            probs: tape.value(pass.probs).clone(),
            attention: pass.attention.map(|a| tape.value(a).clone()),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardPass {
    pub probs: NodeId,
    pub attention: Option<NodeId>,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub probs: Tensor,
    pub attention: Option<Tensor>,
}

impl Prediction {
    /// Argmax class, ties toward the lowest index.
    pub fn predicted_class(&self) -> usize {
        let mut best = 0;
        let mut best_p = self.probs.data()[0];
        for (i, &p) in self.probs.data().iter().enumerate().skip(1) {
            if p > best_p {
                best_p = p;
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    /// Trainable scalars outside the embedding table.
    pub model: usize,
    /// Trainable embedding scalars (excludes the frozen padding row).
    pub embedding: usize,
}

impl ParamCount {
    pub fn total(self) -> usize {
        self.model + self.embedding
    }
}

// ── layer operations ──────────────────────────────────────────────────

/// Node handles for one LSTM's gate parameters on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LstmGateNodes {
    pub w_i: NodeId,
    pub b_i: NodeId,
    pub w_f: NodeId,
    pub b_f: NodeId,
    pub w_o: NodeId,
    pub b_o: NodeId,
    pub w_c: NodeId,
    pub b_c: NodeId,
}

fn split_rows(tape: &mut Tape, m: NodeId, n: usize) -> Result<Vec<NodeId>> {
    (0..n).map(|i| tape.row(m, i)).collect()
}

/// Standard LSTM recurrence from zero initial state over the given input
/// rows (real timesteps only; padding is handled by the caller repeating
/// the final state). Returns one hidden-state node per step.
pub fn lstm_forward(
    tape: &mut Tape,
    gates: &LstmGateNodes,
    x_rows: &[NodeId],
    hidden_dim: usize,
) -> Result<Vec<NodeId>> {
    if x_rows.is_empty() {
        return Err(Error::Contract("lstm_forward: no input steps".into()));
    }
    let mut h = tape.leaf(Tensor::zeros(vec![hidden_dim]));
    let mut c = tape.leaf(Tensor::zeros(vec![hidden_dim]));
    let mut states = Vec::with_capacity(x_rows.len());
    for &x_t in x_rows {
        let z = tape.concat(x_t, h)?;
        let pre_i = {
            let p = tape.matmul(gates.w_i, z)?;
            tape.add(p, gates.b_i)?
        };
        let pre_f = {
            let p = tape.matmul(gates.w_f, z)?;
            tape.add(p, gates.b_f)?
        };
        let pre_o = {
            let p = tape.matmul(gates.w_o, z)?;
            tape.add(p, gates.b_o)?
        };
        let pre_c = {
            let p = tape.matmul(gates.w_c, z)?;
            tape.add(p, gates.b_c)?
        };
        let i = tape.sigmoid(pre_i);
        let f = tape.sigmoid(pre_f);
        let o = tape.sigmoid(pre_o);
        let cand = tape.tanh(pre_c);
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, cand)?;
        c = tape.add(keep, write)?;
        let ct = tape.tanh(c);
        h = tape.mul(o, ct)?;
        states.push(h);
    }
    Ok(states)
}

/// Association layer: one fused row h_i ∘ s per hidden row, optionally
/// clipping each operand onto the unit ball first. Contributes no
/// parameters.
pub fn fuse(
    tape: &mut Tape,
    h_rows: &[NodeId],
    s: NodeId,
    op: FusionOperator,
    normalize: bool,
) -> Result<Vec<NodeId>> {
    let s = if normalize { tape.norm_clip(s)? } else { s };
    h_rows
        .iter()
        .map(|&h_i| {
            let h_i = if normalize { tape.norm_clip(h_i)? } else { h_i };
            match op {
                FusionOperator::Conv => tape.circ_conv(h_i, s),
                FusionOperator::Corr => tape.circ_corr(h_i, s),
                FusionOperator::Mul => tape.mul(h_i, s),
            }
        })
        .collect()
}

/// Attention pooling: scores w·tanh(W_y·m_i) are softmaxed over the
/// unmasked positions, and the result weights the raw hidden rows H, not
/// the association features M.
pub fn attend(
    tape: &mut Tape,
    m: NodeId,
    h: NodeId,
    mask: &[bool],
    w_y: NodeId,
    w: NodeId,
) -> Result<(NodeId, NodeId)> {
    let l = tape.value(m).rows();
    if tape.value(h).rows() != l || mask.len() != l {
        return Err(Error::Dim {
            op: "attend",
            left: tape.value(m).shape().to_vec(),
            right: tape.value(h).shape().to_vec(),
        });
    }
    let mut y_rows = Vec::with_capacity(l);
    for i in 0..l {
        let m_i = tape.row(m, i)?;
        let ym = tape.matmul(w_y, m_i)?;
        y_rows.push(tape.tanh(ym));
    }
    let y = tape.stack_rows(&y_rows)?;
    let scores = tape.matmul(y, w)?;
    let a = tape.masked_softmax(scores, mask)?;
    let r = tape.row_weighted_sum(h, a)?;
    Ok((r, a))
}

/// tanh(W_p·r + W_x·h_last).
pub fn project(
    tape: &mut Tape,
    r: NodeId,
    h_last: NodeId,
    w_p: NodeId,
    w_x: NodeId,
) -> Result<NodeId> {
    let pr = tape.matmul(w_p, r)?;
    let px = tape.matmul(w_x, h_last)?;
    let sum = tape.add(pr, px)?;
    Ok(tape.tanh(sum))
}

/// softmax(W_f·r + b_f).
pub fn classify(tape: &mut Tape, r: NodeId, w_f: NodeId, b_f: NodeId) -> Result<NodeId> {
    let logits = {
        let p = tape.matmul(w_f, r)?;
        tape.add(p, b_f)?
    };
    let k = tape.value(logits).len();
    tape.masked_softmax(logits, &vec![true; k])
}

// ── reference (tape-free) forms of the embedding ops ──────────────────

/// Materializes a padded input matrix and its mask: the first
/// `max_len` tokens keep their embedding rows, the tail is zero rows.
pub fn embed_sequence(
    tokens: &[usize],
    table: &EmbeddingTable,
    max_len: usize,
) -> Result<(Tensor, Vec<bool>)> {
    let k = table.dim();
    let mut x = Tensor::zeros(vec![max_len, k]);
    let mut mask = vec![false; max_len];
    for (t, &ix) in tokens.iter().take(max_len).enumerate() {
        if ix >= table.vocab_size() {
            return Err(Error::Vocab { index: ix, size: table.vocab_size() });
        }
        x.row_mut(t).copy_from_slice(table.values.row(ix));
        mask[t] = true;
    }
    Ok((x, mask))
}

/// Bag-of-words aspect embedding: the sum of the aspect tokens' rows.
pub fn aspect_embed(tokens: &[usize], table: &EmbeddingTable) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::Contract("empty aspect".into()));
    }
    let mut s = vec![0.0; table.dim()];
    for &ix in tokens {
        if ix >= table.vocab_size() {
            return Err(Error::Vocab { index: ix, size: table.vocab_size() });
        }
        for (acc, &v) in s.iter_mut().zip(table.values.row(ix)) {
            *acc += v;
        }
    }
    Ok(s)
}
