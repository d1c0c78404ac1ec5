//! Release gate: eight end-to-end checks, one test per numbered
//! criterion, each printing a single summary line on success. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines.

use std::time::{Duration, Instant};

use once_cell::sync::Lazy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use aflstm::autograd::{grad_check, NodeId, ParamSet, Tape};
use aflstm::checkpoint::model_to_bytes;
use aflstm::data::{
    build_vocab, index_corpus, make_dev_split, synth_generate, IndexedExample, VocabSpec,
    Vocabulary,
};
use aflstm::holo::{
    circ_conv_fft, circ_conv_naive, circ_corr_fft, circ_corr_naive, fuse_backward, FusionOperator,
};
use aflstm::hrr::capacity_experiment;
use aflstm::model::{
    attend, classify, fuse, lstm_forward, project, EmbeddingTable, LstmGateNodes, Model,
    ModelConfig, ModelVariant,
};
use aflstm::tensor::Tensor;
use aflstm::train::{evaluate, train, TrainConfig};

fn report(criterion: usize, detail: &str, elapsed: Duration) {
    println!("criterion {criterion}: PASS — {detail} ({:.1}s)", elapsed.as_secs_f64());
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

// ── 1: FFT operators agree with the direct definitions ────────────────

#[test]
fn criterion_1_fft_equals_naive_operators() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    // powers of two exercise the radix-2 path, the rest the direct DFT
    let dims = [
        1usize, 2, 3, 4, 5, 7, 8, 12, 16, 31, 32, 33, 64, 100, 128, 255, 256, 333, 512, 777, 1024,
    ];
    let mut worst = 0.0f64;
    for &d in &dims {
        for _ in 0..3 {
            let h = random_vec(&mut rng, d);
            let s = random_vec(&mut rng, d);
            let pairs = [
                (circ_conv_naive(&h, &s).unwrap(), circ_conv_fft(&h, &s).unwrap()),
                (circ_corr_naive(&h, &s).unwrap(), circ_corr_fft(&h, &s).unwrap()),
            ];
            for (reference, fast) in pairs {
                for (a, b) in reference.iter().zip(&fast) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    assert!(worst < 1e-10, "max |naive - fft| = {worst:e}");
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    report(1, &format!("fft matches naive to {worst:.2e} over {} dims", dims.len()), elapsed);
}

// ── 2: analytic gradients match finite differences ────────────────────

const LAYER_EPS: f64 = 1e-4;
// full models need a coarser step than single layers: rounding noise on
// the loss difference scales as 1/eps, truncation as eps^2, and 2e-3
// sits where both stay below the tolerance for these compositions
const MODEL_EPS: f64 = 2e-3;
const GRAD_TOL: f64 = 1e-5;

fn checked(label: &str, params: ParamSet, eps: f64, f: impl FnMut(&ParamSet) -> aflstm::Result<(Tape, NodeId)>) -> f64 {
    let mut params = params;
    let err = grad_check(&mut params, eps, f).unwrap_or_else(|e| panic!("{label}: {e}"));
    assert!(err < GRAD_TOL, "{label}: max rel grad error {err:e}");
    err
}

fn vec_param(params: &mut ParamSet, name: &str, data: &[f64]) -> aflstm::autograd::ParamId {
    params.add(name, Tensor::from_vec(vec![data.len()], data.to_vec()).unwrap(), true)
}

fn mat_param(
    params: &mut ParamSet,
    name: &str,
    rows: usize,
    cols: usize,
    rng: &mut ChaCha8Rng,
) -> aflstm::autograd::ParamId {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-0.9..0.9)).collect();
    params.add(name, Tensor::from_vec(vec![rows, cols], data).unwrap(), true)
}

fn layer_checks() -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut ran = 0usize;
    let mut record = |e: f64| {
        worst = worst.max(e);
        ran += 1;
    };

    // matrix-vector product
    let mut p = ParamSet::new();
    let a = mat_param(&mut p, "a", 3, 4, &mut rng);
    let x = vec_param(&mut p, "x", &[0.3, -0.8, 0.5, 0.2]);
    record(checked("matmul", p, LAYER_EPS, |p| {
        let mut t = Tape::new();
        let an = t.param(p, a);
        let xn = t.param(p, x);
        let y = t.matmul(an, xn)?;
        let loss = t.sum_squares(y);
        Ok((t, loss))
    }));

    // elementwise arithmetic
    let mut p = ParamSet::new();
    let u = vec_param(&mut p, "u", &[0.4, -0.2, 0.9, -0.7, 0.1]);
    let v = vec_param(&mut p, "v", &[-0.5, 0.3, 0.6, 0.8, -0.9]);
    record(checked("add/sub/mul", p, LAYER_EPS, |p| {
        let mut t = Tape::new();
        let un = t.param(p, u);
        let vn = t.param(p, v);
        let sum = t.add(un, vn)?;
        let diff = t.sub(un, vn)?;
        let prod = t.mul(sum, diff)?;
        let loss = t.sum_squares(prod);
        Ok((t, loss))
    }));

    // pointwise nonlinearities
    let mut p = ParamSet::new();
    let z = vec_param(&mut p, "z", &[-1.4, -0.3, 0.0, 0.4, 1.2, 2.0]);
    record(checked("tanh/sigmoid", p, LAYER_EPS, |p| {
        let mut t = Tape::new();
        let zn = t.param(p, z);
        let th = t.tanh(zn);
        let sg = t.sigmoid(th);
        let loss = t.sum_squares(sg);
        Ok((t, loss))
    }));

    // masked softmax feeding a likelihood loss
    let mut p = ParamSet::new();
    let logits = vec_param(&mut p, "logits", &[0.2, -1.1, 0.7, 0.4, -0.6]);
    let mask = [true, false, true, true, true];
    record(checked("masked_softmax+nll", p, LAYER_EPS, move |p| {
        let mut t = Tape::new();
        let ln = t.param(p, logits);
        let sm = t.masked_softmax(ln, &mask)?;
        let loss = t.nll(sm, 2)?;
        Ok((t, loss))
    }));

    // circular operators
    for (label, conv) in [("circ_conv", true), ("circ_corr", false)] {
        let mut p = ParamSet::new();
        let hd: Vec<f64> = (0..8).map(|_| rng.random_range(-0.9..0.9)).collect();
        let sd: Vec<f64> = (0..8).map(|_| rng.random_range(-0.9..0.9)).collect();
        let h = vec_param(&mut p, "h", &hd);
        let s = vec_param(&mut p, "s", &sd);
        record(checked(label, p, LAYER_EPS, move |p| {
            let mut t = Tape::new();
            let hn = t.param(p, h);
            let sn = t.param(p, s);
            let out = if conv { t.circ_conv(hn, sn)? } else { t.circ_corr(hn, sn)? };
            let loss = t.sum_squares(out);
            Ok((t, loss))
        }));
    }

    // norm clip, in and out of the unit ball
    for (label, scale) in [("norm_clip inside", 0.3), ("norm_clip outside", 3.0)] {
        let mut p = ParamSet::new();
        let data: Vec<f64> = (0..6).map(|_| scale * rng.random_range(0.3..0.9)).collect();
        let v = vec_param(&mut p, "v", &data);
        let offset: Vec<f64> = (0..6).map(|_| rng.random_range(-0.5..0.5)).collect();
        record(checked(label, p, LAYER_EPS, move |p| {
            let mut t = Tape::new();
            let vn = t.param(p, v);
            let clipped = t.norm_clip(vn)?;
            let off = t.leaf(Tensor::from_vec(vec![6], offset.clone()).unwrap());
            let shifted = t.add(clipped, off)?;
            let loss = t.sum_squares(shifted);
            Ok((t, loss))
        }));
    }

    // embedding gather with a repeated index
    let mut p = ParamSet::new();
    let table = mat_param(&mut p, "table", 6, 3, &mut rng);
    record(checked("embed_rows", p, LAYER_EPS, |p| {
        let mut t = Tape::new();
        let rows = t.embed_rows(p, table, &[2, 5, 3, 5])?;
        let loss = t.sum_squares(rows);
        Ok((t, loss))
    }));

    // attention-style weighted sum of rows
    let mut p = ParamSet::new();
    let m = mat_param(&mut p, "m", 3, 4, &mut rng);
    let w = vec_param(&mut p, "w", &[0.2, 0.5, 0.3]);
    record(checked("row_weighted_sum", p, LAYER_EPS, |p| {
        let mut t = Tape::new();
        let mn = t.param(p, m);
        let wn = t.param(p, w);
        let r = t.row_weighted_sum(mn, wn)?;
        let loss = t.sum_squares(r);
        Ok((t, loss))
    }));

    // concat, row split and restack
    let mut p = ParamSet::new();
    let a2 = vec_param(&mut p, "a", &[0.1, -0.4]);
    let b2 = vec_param(&mut p, "b", &[0.6, -0.2]);
    let m2 = mat_param(&mut p, "m", 3, 4, &mut rng);
    record(checked("concat/row/stack", p, LAYER_EPS, |p| {
        let mut t = Tape::new();
        let an = t.param(p, a2);
        let bn = t.param(p, b2);
        let cat = t.concat(an, bn)?;
        let mn = t.param(p, m2);
        let r0 = t.row(mn, 0)?;
        let r2 = t.row(mn, 2)?;
        let stacked = t.stack_rows(&[r0, r2, cat])?;
        let loss = t.sum_squares(stacked);
        Ok((t, loss))
    }));

    // inverted dropout with a fixed mask
    let mut p = ParamSet::new();
    let dx = vec_param(&mut p, "x", &[0.4, -0.7, 0.2, 0.9, -0.3, 0.5]);
    let mask_vals = [2.0, 0.0, 2.0, 0.0, 2.0, 0.0];
    record(checked("dropout+scale", p, LAYER_EPS, move |p| {
        let mut t = Tape::new();
        let xn = t.param(p, dx);
        let dropped = t.dropout(xn, &mask_vals)?;
        let scaled = t.scale(dropped, 1.7);
        let loss = t.sum_squares(scaled);
        Ok((t, loss))
    }));

    // one LSTM chain over three steps
    let mut p = ParamSet::new();
    let d = 3usize;
    let input = 2usize;
    let names = ["w_i", "b_i", "w_f", "b_f", "w_o", "b_o", "w_c", "b_c"];
    let mut ids = Vec::new();
    for (j, name) in names.iter().enumerate() {
        if j % 2 == 0 {
            ids.push(mat_param(&mut p, name, d, d + input, &mut rng));
        } else {
            let bias: Vec<f64> = (0..d).map(|_| rng.random_range(-0.2..0.2)).collect();
            ids.push(vec_param(&mut p, name, &bias));
        }
    }
    let xs = mat_param(&mut p, "xs", 3, input, &mut rng);
    record(checked("lstm chain", p, LAYER_EPS, move |p| {
        let mut t = Tape::new();
        let gates = LstmGateNodes {
            w_i: t.param(p, ids[0]),
            b_i: t.param(p, ids[1]),
            w_f: t.param(p, ids[2]),
            b_f: t.param(p, ids[3]),
            w_o: t.param(p, ids[4]),
            b_o: t.param(p, ids[5]),
            w_c: t.param(p, ids[6]),
            b_c: t.param(p, ids[7]),
        };
        let xm = t.param(p, xs);
        let x_rows = (0..3).map(|i| t.row(xm, i)).collect::<aflstm::Result<Vec<_>>>()?;
        let states = lstm_forward(&mut t, &gates, &x_rows, d)?;
        let stacked = t.stack_rows(&states)?;
        let loss = t.sum_squares(stacked);
        Ok((t, loss))
    }));

    // fusion block over two hidden rows, with clipping
    for op in [FusionOperator::Conv, FusionOperator::Corr, FusionOperator::Mul] {
        let mut p = ParamSet::new();
        let h = mat_param(&mut p, "h", 2, 8, &mut rng);
        let sdata: Vec<f64> = (0..8).map(|_| rng.random_range(-0.9..0.9)).collect();
        let s = vec_param(&mut p, "s", &sdata);
        record(checked(&format!("fuse {op:?}"), p, LAYER_EPS, move |p| {
            let mut t = Tape::new();
            let hm = t.param(p, h);
            let h_rows = (0..2).map(|i| t.row(hm, i)).collect::<aflstm::Result<Vec<_>>>()?;
            let sn = t.param(p, s);
            let fused = fuse(&mut t, &h_rows, sn, op, true)?;
            let stacked = t.stack_rows(&fused)?;
            let loss = t.sum_squares(stacked);
            Ok((t, loss))
        }));
    }

    // attention block with a masked position
    let mut p = ParamSet::new();
    let m3 = mat_param(&mut p, "m", 3, 4, &mut rng);
    let h3 = mat_param(&mut p, "h", 3, 4, &mut rng);
    let wy = mat_param(&mut p, "w_y", 4, 4, &mut rng);
    let wv = vec_param(&mut p, "w", &[0.4, -0.3, 0.8, 0.1]);
    record(checked("attend", p, LAYER_EPS, |p| {
        let mut t = Tape::new();
        let mn = t.param(p, m3);
        let hn = t.param(p, h3);
        let wyn = t.param(p, wy);
        let wn = t.param(p, wv);
        let (r, _a) = attend(&mut t, mn, hn, &[true, true, false], wyn, wn)?;
        let loss = t.sum_squares(r);
        Ok((t, loss))
    }));

    // projection block
    let mut p = ParamSet::new();
    let r4 = vec_param(&mut p, "r", &[0.5, -0.1, 0.7, 0.2]);
    let hl = vec_param(&mut p, "h_last", &[-0.6, 0.4, 0.1, -0.8]);
    let wp = mat_param(&mut p, "w_p", 4, 4, &mut rng);
    let wx = mat_param(&mut p, "w_x", 4, 4, &mut rng);
    record(checked("project", p, LAYER_EPS, |p| {
        let mut t = Tape::new();
        let rn = t.param(p, r4);
        let hn = t.param(p, hl);
        let wpn = t.param(p, wp);
        let wxn = t.param(p, wx);
        let out = project(&mut t, rn, hn, wpn, wxn)?;
        let loss = t.sum_squares(out);
        Ok((t, loss))
    }));

    // classifier head
    let mut p = ParamSet::new();
    let r5 = vec_param(&mut p, "r", &[0.3, -0.5, 0.8, 0.1, -0.2]);
    let wc = mat_param(&mut p, "w", 3, 5, &mut rng);
    let bc = vec_param(&mut p, "b", &[0.05, -0.1, 0.02]);
    record(checked("classify", p, LAYER_EPS, |p| {
        let mut t = Tape::new();
        let rn = t.param(p, r5);
        let wn = t.param(p, wc);
        let bn = t.param(p, bc);
        let probs = classify(&mut t, rn, wn, bn)?;
        let loss = t.nll(probs, 1)?;
        Ok((t, loss))
    }));

    (worst, ran)
}

fn full_model_check(variant: ModelVariant, fusion: Option<FusionOperator>) -> f64 {
    let config = ModelConfig {
        variant,
        embed_dim: 8,
        hidden_dim: 8,
        max_len: 5,
        num_classes: 3,
        fusion,
        use_projection: variant.has_attention(),
        use_normalization: variant == ModelVariant::AfLstm,
        dropout_p: 0.0,
        seed: 3,
    };
    let model = Model::new(config, 12, None).unwrap();
    let sentence = [2usize, 3, 4, 5, 6];
    let aspect = [7usize, 3];
    let lambda = 4e-6;
    let params = model.params().clone();
    checked(&format!("model {variant} {fusion:?}"), params, MODEL_EPS, move |p| {
        let mut tape = Tape::new();
        let pass = model.build_forward(p, &mut tape, &sentence, &aspect, None)?;
        let nll = tape.nll(pass.probs, 1)?;
        let mut reg: Option<NodeId> = None;
        let trainable: Vec<_> = p.ids().filter(|&id| p.get(id).trainable()).collect();
        for id in trainable {
            let sq = tape.param_sum_squares(p, id);
            reg = Some(match reg {
                Some(acc) => tape.add(acc, sq)?,
                None => sq,
            });
        }
        let reg = tape.scale(reg.expect("trainable params"), lambda);
        let total = tape.add(nll, reg)?;
        Ok((tape, total))
    })
}

#[test]
fn criterion_2_gradient_suite() {
    let start = Instant::now();
    let (mut worst, mut checks) = layer_checks();

    let variants: [(ModelVariant, Option<FusionOperator>); 7] = [
        (ModelVariant::Nbow, None),
        (ModelVariant::Lstm, None),
        (ModelVariant::AtLstm, None),
        (ModelVariant::AtaeLstm, None),
        (ModelVariant::AfLstm, Some(FusionOperator::Conv)),
        (ModelVariant::AfLstm, Some(FusionOperator::Corr)),
        (ModelVariant::AfLstm, Some(FusionOperator::Mul)),
    ];
    for (variant, fusion) in variants {
        worst = worst.max(full_model_check(variant, fusion));
        checks += 1;
    }

    // backward of convolution is correlation: the analytic operand
    // gradients must equal plain correlations of the inputs
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut duality_worst = 0.0f64;
    for d in [8usize, 12] {
        let h = random_vec(&mut rng, d);
        let s = random_vec(&mut rng, d);
        let g = random_vec(&mut rng, d);
        let (grad_h, grad_s) = fuse_backward(FusionOperator::Conv, &g, &h, &s).unwrap();
        let want_s = circ_corr_naive(&h, &g).unwrap();
        let want_h = circ_corr_naive(&s, &g).unwrap();
        for (a, b) in grad_s.iter().zip(&want_s).chain(grad_h.iter().zip(&want_h)) {
            duality_worst = duality_worst.max((a - b).abs());
        }
    }
    assert!(duality_worst < 1e-12, "conv-grad/correlation gap {duality_worst:e}");

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    report(
        2,
        &format!("{checks} gradient checks max rel err {worst:.2e}, conv duality gap {duality_worst:.2e}"),
        elapsed,
    );
}

// ── 3: parameter accounting at publication scale ──────────────────────

fn model_param_count(variant: ModelVariant, fusion: Option<FusionOperator>) -> usize {
    let config = ModelConfig {
        variant,
        embed_dim: 300,
        hidden_dim: 300,
        max_len: 40,
        num_classes: 3,
        fusion,
        use_projection: false,
        use_normalization: false,
        dropout_p: 0.0,
        seed: 0,
    };
    Model::new(config, 10, None).unwrap().param_count().model
}

#[test]
fn criterion_3_parameter_accounting() {
    let start = Instant::now();
    let lstm = model_param_count(ModelVariant::Lstm, None);
    let af_conv = model_param_count(ModelVariant::AfLstm, Some(FusionOperator::Conv));
    let af_corr = model_param_count(ModelVariant::AfLstm, Some(FusionOperator::Corr));
    let af_mul = model_param_count(ModelVariant::AfLstm, Some(FusionOperator::Mul));
    let at = model_param_count(ModelVariant::AtLstm, None);
    let atae = model_param_count(ModelVariant::AtaeLstm, None);

    assert!((719_000..=723_000).contains(&lstm), "lstm {lstm}");
    assert!((808_000..=814_000).contains(&af_conv), "af {af_conv}");
    assert!(af_conv < at && at < atae, "ordering {af_conv} {at} {atae}");
    assert_eq!(af_conv, af_corr);
    assert_eq!(af_conv, af_mul);

    let elapsed = start.elapsed();
    report(
        3,
        &format!("lstm {lstm}, af {af_conv} (fusion-invariant), at {at}, atae {atae}"),
        elapsed,
    );
}

// ── 4: holographic retrieval accuracy ─────────────────────────────────

#[test]
fn criterion_4_hrr_retrieval() {
    let start = Instant::now();
    let headline = capacity_experiment(512, 10, 1000, 4).unwrap();
    assert!(headline >= 0.95, "d=512 accuracy {headline}");

    let dims = [64usize, 256, 1024];
    let sweep: Vec<f64> = dims
        .iter()
        .map(|&d| capacity_experiment(d, 20, 300, 4).unwrap())
        .collect();
    for pair in sweep.windows(2) {
        assert!(pair[0] <= pair[1], "accuracy fell along {sweep:?}");
    }
    assert!(sweep[0] < sweep[2], "no growth along {sweep:?}");

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    report(
        4,
        &format!("d=512 accuracy {headline:.3}; trend over d {sweep:?}"),
        elapsed,
    );
}

// ── 5/6/7: behavioral runs on the contrastive corpus ──────────────────

const RUN_D: usize = 64;
const RUN_L: usize = 16;
const RUN_SEED: u64 = 5;
const EMBED_SEED: u64 = 7;

struct Corpora {
    train: Vec<IndexedExample>,
    dev: Vec<IndexedExample>,
    test: Vec<IndexedExample>,
    vocab: Vocabulary,
}

fn corpora() -> Corpora {
    let spec = VocabSpec::default();
    let train_corpus = synth_generate(1000, &spec, 42).unwrap();
    let test_corpus = synth_generate(200, &spec, 43).unwrap();
    let (train_part, dev_part, _) = make_dev_split(&train_corpus, 400, 0).unwrap();
    let vocab = build_vocab(&[&train_part], 1);
    Corpora {
        train: index_corpus(&train_part, &vocab),
        dev: index_corpus(&dev_part, &vocab),
        test: index_corpus(&test_corpus, &vocab),
        vocab,
    }
}

/// Unit-scale random embeddings standing in for pretrained vectors:
/// coordinates are O(1), as with published embeddings, rather than the
/// 0.1-scale cold-start draw used when nothing is supplied.
fn unit_scale_table(vocab_size: usize) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(EMBED_SEED);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut values = Tensor::zeros(vec![vocab_size, RUN_D]);
    for row in 1..vocab_size {
        for v in values.row_mut(row) {
            *v = normal.sample(&mut rng);
        }
    }
    EmbeddingTable { values, trainable: true }
}

struct RunResult {
    test_accuracy: f64,
    dev_accuracy: f64,
    history_accuracies: Vec<f64>,
    checkpoint: Vec<u8>,
    model: Model,
}

fn run_variant(c: &Corpora, variant: ModelVariant, fusion: Option<FusionOperator>) -> RunResult {
    let config = ModelConfig {
        variant,
        embed_dim: RUN_D,
        hidden_dim: RUN_D,
        max_len: RUN_L,
        num_classes: 2,
        fusion,
        use_projection: false,
        use_normalization: variant == ModelVariant::AfLstm,
        dropout_p: 0.0,
        seed: RUN_SEED,
    };
    let table = unit_scale_table(c.vocab.len());
    let model = Model::new(config, c.vocab.len(), Some(table)).unwrap();
    let train_config = TrainConfig { seed: RUN_SEED, ..TrainConfig::default() };
    let out = train(model, &c.train, &c.dev, &train_config).unwrap();
    let metrics = evaluate(&out.model, &c.test, "test", out.best_epoch).unwrap();
    RunResult {
        test_accuracy: metrics.accuracy,
        dev_accuracy: out.best_dev_accuracy,
        history_accuracies: out.history.iter().map(|m| m.accuracy).collect(),
        checkpoint: model_to_bytes(&out.model, &c.vocab).unwrap(),
        model: out.model,
    }
}

struct SharedRuns {
    af_conv: RunResult,
    af_conv_rerun: RunResult,
    af_mul: RunResult,
    lstm: RunResult,
    test: Vec<IndexedExample>,
    elapsed_first_three: Duration,
}

static RUNS: Lazy<SharedRuns> = Lazy::new(|| {
    let c = corpora();
    let start = Instant::now();
    let af_conv = run_variant(&c, ModelVariant::AfLstm, Some(FusionOperator::Conv));
    let af_mul = run_variant(&c, ModelVariant::AfLstm, Some(FusionOperator::Mul));
    let lstm = run_variant(&c, ModelVariant::Lstm, None);
    let elapsed_first_three = start.elapsed();
    let af_conv_rerun = run_variant(&c, ModelVariant::AfLstm, Some(FusionOperator::Conv));
    SharedRuns {
        af_conv,
        af_conv_rerun,
        af_mul,
        lstm,
        test: c.test,
        elapsed_first_three,
    }
});

#[test]
fn criterion_5_synthetic_aspect_conditioning() {
    let runs = &*RUNS;
    assert!(
        runs.af_conv.test_accuracy >= 0.95,
        "af-conv test accuracy {}",
        runs.af_conv.test_accuracy
    );
    assert!(
        runs.af_mul.test_accuracy >= 0.90,
        "af-mul test accuracy {}",
        runs.af_mul.test_accuracy
    );
    assert!(
        runs.lstm.test_accuracy <= 0.60,
        "aspect-blind lstm test accuracy {}",
        runs.lstm.test_accuracy
    );
    assert!(
        runs.elapsed_first_three < Duration::from_secs(600),
        "took {:?}",
        runs.elapsed_first_three
    );
    report(
        5,
        &format!(
            "test accuracy af-conv {:.4}, af-mul {:.4}, lstm {:.4}",
            runs.af_conv.test_accuracy, runs.af_mul.test_accuracy, runs.lstm.test_accuracy
        ),
        runs.elapsed_first_three,
    );
}

// clause layout of the generated sentences:
// [the A1 is J1] but [the A2 is J2] — indices 0..=3, 4, 5..=8
const FIRST_CLAUSE: std::ops::RangeInclusive<usize> = 0..=3;
const SECOND_CLAUSE: std::ops::RangeInclusive<usize> = 5..=8;
const SENT_LEN: usize = 9;

fn clause_of(index: usize) -> usize {
    if index <= 4 {
        1
    } else {
        2
    }
}

#[test]
fn criterion_6_attention_focus_and_switching() {
    let start = Instant::now();
    let runs = &*RUNS;
    let model = &runs.af_conv.model;

    let mut correct = 0usize;
    let mut mass_ok = 0usize;
    let mut argmaxes: Vec<Option<usize>> = Vec::with_capacity(runs.test.len());
    for ex in &runs.test {
        let pred = model.forward(&ex.sentence, &ex.aspect).unwrap();
        let weights = pred.attention.as_ref().expect("attention variant").data();
        let attn = &weights[..SENT_LEN];
        let is_correct = pred.predicted_class() == ex.label;
        // the queried aspect is the sentence's first or second noun
        let in_first = ex.aspect[0] == ex.sentence[1];
        if is_correct {
            correct += 1;
            let own: f64 = if in_first {
                attn[FIRST_CLAUSE].iter().sum()
            } else {
                attn[SECOND_CLAUSE].iter().sum()
            };
            if own >= 0.6 {
                mass_ok += 1;
            }
            let argmax = (0..SENT_LEN).max_by(|&a, &b| attn[a].total_cmp(&attn[b])).unwrap();
            argmaxes.push(Some(argmax));
        } else {
            argmaxes.push(None);
        }
    }

    let mut switch_total = 0usize;
    let mut switch_ok = 0usize;
    for pair in argmaxes.chunks(2) {
        if let [Some(first), Some(second)] = pair {
            switch_total += 1;
            if clause_of(*first) != clause_of(*second) {
                switch_ok += 1;
            }
        }
    }

    assert!(correct > 0, "no correct predictions to inspect");
    let mass_rate = mass_ok as f64 / correct as f64;
    assert!(mass_rate >= 0.8, "clause mass rate {mass_rate} ({mass_ok}/{correct})");
    assert!(switch_total > 0, "no fully-correct aspect pairs");
    let switch_rate = switch_ok as f64 / switch_total as f64;
    assert!(
        switch_rate >= 0.8,
        "argmax switch rate {switch_rate} ({switch_ok}/{switch_total})"
    );

    report(
        6,
        &format!(
            "clause mass rate {mass_rate:.3} ({mass_ok}/{correct}), argmax switch rate {switch_rate:.3} ({switch_ok}/{switch_total})"
        ),
        start.elapsed(),
    );
}

#[test]
fn criterion_7_determinism() {
    let start = Instant::now();
    let runs = &*RUNS;
    assert_eq!(
        runs.af_conv.test_accuracy.to_bits(),
        runs.af_conv_rerun.test_accuracy.to_bits(),
        "test accuracy drifted between identical runs"
    );
    assert_eq!(
        runs.af_conv.dev_accuracy.to_bits(),
        runs.af_conv_rerun.dev_accuracy.to_bits()
    );
    assert_eq!(
        runs.af_conv.history_accuracies, runs.af_conv_rerun.history_accuracies,
        "history accuracies drifted"
    );
    assert_eq!(
        runs.af_conv.checkpoint, runs.af_conv_rerun.checkpoint,
        "checkpoint bytes drifted"
    );
    report(
        7,
        &format!(
            "rerun reproduced {} history entries and {}-byte checkpoint exactly",
            runs.af_conv.history_accuracies.len(),
            runs.af_conv.checkpoint.len()
        ),
        start.elapsed(),
    );
}

// ── 8: property families run quickly in-process ───────────────────────

#[test]
fn criterion_8_property_sweep() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(808);

    // softmax normalization and masking
    for _ in 0..500 {
        let d = rng.random_range(1..=12);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-8.0..8.0)).collect();
        let mut mask: Vec<bool> = (0..d).map(|_| rng.random()).collect();
        if !mask.iter().any(|&b| b) {
            mask[0] = true;
        }
        let mut t = Tape::new();
        let xn = t.leaf(Tensor::from_vec(vec![d], x).unwrap());
        let sm = t.masked_softmax(xn, &mask).unwrap();
        let out = t.value(sm).data();
        let total: f64 = out.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (w, &live) in out.iter().zip(&mask) {
            assert!(if live { *w > 0.0 } else { *w == 0.0 });
        }
    }

    // conv commutes; corr reverses under swap; both preserve total sum
    let mut corr_swap_differs = false;
    for _ in 0..300 {
        let d = rng.random_range(1..=48);
        let h = random_vec(&mut rng, d);
        let s = random_vec(&mut rng, d);
        let hs = circ_conv_naive(&h, &s).unwrap();
        let sh = circ_conv_naive(&s, &h).unwrap();
        for (a, b) in hs.iter().zip(&sh) {
            assert!((a - b).abs() < 1e-10);
        }
        let cr = circ_corr_naive(&h, &s).unwrap();
        let rc = circ_corr_naive(&s, &h).unwrap();
        for k in 0..d {
            assert!((rc[k] - cr[(d - k) % d]).abs() < 1e-10);
        }
        if cr != rc {
            corr_swap_differs = true;
        }
        let product = h.iter().sum::<f64>() * s.iter().sum::<f64>();
        let scale = 1.0f64.max(product.abs());
        assert!((hs.iter().sum::<f64>() - product).abs() / scale < 1e-10);
        assert!((cr.iter().sum::<f64>() - product).abs() / scale < 1e-10);
    }
    assert!(corr_swap_differs, "correlation commuted on every sample");

    // norm clip projects onto the unit ball and preserves direction
    for _ in 0..500 {
        let d = rng.random_range(1..=32);
        let gain = rng.random_range(0.01..6.0);
        let v: Vec<f64> = (0..d).map(|_| gain * rng.random_range(-1.0..1.0)).collect();
        let clipped = aflstm::holo::norm_clip(&v);
        let norm_in = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let norm_out = clipped.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm_out <= 1.0 + 1e-12);
        if norm_in <= 1.0 {
            assert_eq!(clipped, v);
        } else {
            for (c, orig) in clipped.iter().zip(&v) {
                assert!((c * norm_in - orig).abs() < 1e-9);
            }
        }
    }

    // corpus writer/loader round-trip on generated corpora
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..20u64 {
        let corpus = synth_generate(5, &VocabSpec::default(), seed).unwrap();
        let path = dir.path().join(format!("c{seed}.jsonl"));
        std::fs::write(&path, aflstm::data::corpus_to_bytes(&corpus).unwrap()).unwrap();
        let (reloaded, skipped) = aflstm::data::load_corpus(&path).unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(reloaded.examples, corpus.examples);
    }

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    report(8, "softmax, circular-operator, clipping and round-trip sweeps all hold", elapsed);
}
