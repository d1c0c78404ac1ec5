//! Randomized structural properties of the core operators. Runs as its
//! own target so the whole file can be exercised in isolation:
//!   cargo test --test properties

use proptest::prelude::*;

use aflstm::autograd::Tape;
use aflstm::data::{corpus_to_bytes, load_corpus, Corpus, Example, Label, TaskKind};
use aflstm::holo::{circ_conv_naive, circ_corr_naive, norm_clip};
use aflstm::tensor::Tensor;

fn vector(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, d)
}

fn vector_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..=64).prop_flat_map(|d| (vector(d), vector(d)))
}

// ── softmax ───────────────────────────────────────────────────────────

proptest! {
    #[test]
    fn softmax_is_a_distribution_over_unmasked_entries(
        (x, mask) in (1usize..=12).prop_flat_map(|d| {
            (vector(d).prop_map(|v| v.iter().map(|x| x * 8.0).collect::<Vec<f64>>()),
             prop::collection::vec(any::<bool>(), d))
        }).prop_filter("at least one live position", |(_, m)| m.iter().any(|&b| b))
    ) {
        let mut tape = Tape::new();
        let node = tape.leaf(Tensor::from_vec(vec![x.len()], x.clone()).unwrap());
        let sm = tape.masked_softmax(node, &mask).unwrap();
        let out = tape.value(sm).data().to_vec();
        let mut total = 0.0;
        for (i, (&w, &live)) in out.iter().zip(&mask).enumerate() {
            if live {
                prop_assert!(w > 0.0 && w <= 1.0, "weight {w} at {i}");
                total += w;
            } else {
                prop_assert_eq!(w, 0.0, "masked entry {} leaked", i);
            }
        }
        prop_assert!((total - 1.0).abs() < 1e-12, "sum {total}");
    }

    #[test]
    fn softmax_is_shift_invariant(
        (x, shift) in (1usize..=8).prop_flat_map(|d| (vector(d), -5.0f64..5.0))
    ) {
        let mask = vec![true; x.len()];
        let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(vec![x.len()], x).unwrap());
        let b = tape.leaf(Tensor::from_vec(vec![shifted.len()], shifted).unwrap());
        let sa = tape.masked_softmax(a, &mask).unwrap();
        let sb = tape.masked_softmax(b, &mask).unwrap();
        for (p, q) in tape.value(sa).data().iter().zip(tape.value(sb).data()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }
}

// ── circular operators ────────────────────────────────────────────────

proptest! {
    #[test]
    fn convolution_commutes((h, s) in vector_pair()) {
        let hs = circ_conv_naive(&h, &s).unwrap();
        let sh = circ_conv_naive(&s, &h).unwrap();
        for (a, b) in hs.iter().zip(&sh) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    // corr(s,h) is corr(h,s) read backwards around the circle, so the
    // two agree only on palindromic outputs.
    #[test]
    fn correlation_reverses_under_swap((h, s) in vector_pair()) {
        let d = h.len();
        let hs = circ_corr_naive(&h, &s).unwrap();
        let sh = circ_corr_naive(&s, &h).unwrap();
        for k in 0..d {
            prop_assert!((sh[k] - hs[(d - k) % d]).abs() < 1e-10);
        }
    }

    #[test]
    fn both_operators_preserve_total_sum((h, s) in vector_pair()) {
        let sum_h: f64 = h.iter().sum();
        let sum_s: f64 = s.iter().sum();
        let product = sum_h * sum_s;
        let conv_sum: f64 = circ_conv_naive(&h, &s).unwrap().iter().sum();
        let corr_sum: f64 = circ_corr_naive(&h, &s).unwrap().iter().sum();
        let scale = 1.0f64.max(product.abs());
        prop_assert!((conv_sum - product).abs() / scale < 1e-10);
        prop_assert!((corr_sum - product).abs() / scale < 1e-10);
    }
}

#[test]
fn correlation_has_a_non_commuting_witness() {
    let h = [1.0, 2.0, 3.0, 4.0];
    let s = [5.0, 6.0, 8.0, 7.0];
    let hs = circ_corr_naive(&h, &s).unwrap();
    let sh = circ_corr_naive(&s, &h).unwrap();
    assert_ne!(hs, sh);
}

// ── norm clipping ─────────────────────────────────────────────────────

proptest! {
    #[test]
    fn clipped_vectors_live_in_the_unit_ball(
        (v, gain) in (1usize..=32).prop_flat_map(|d| (vector(d), 0.01f64..10.0))
    ) {
        let v: Vec<f64> = v.iter().map(|x| x * gain).collect();
        let clipped = norm_clip(&v);
        let norm_in = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let norm_out = clipped.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm_out <= 1.0 + 1e-12);
        if norm_in <= 1.0 {
            prop_assert_eq!(&clipped, &v, "short vectors pass through untouched");
        } else {
            // projection keeps the direction: clipped * ‖v‖ recovers v
            for (c, orig) in clipped.iter().zip(&v) {
                prop_assert!((c * norm_in - orig).abs() < 1e-9);
            }
        }
    }
}

// ── corpus round-trip ─────────────────────────────────────────────────

fn token() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9]{0,6}"
}

fn example() -> impl Strategy<Value = Example> {
    (
        prop::collection::vec(token(), 1..12),
        prop::collection::vec(token(), 1..3),
        prop_oneof![
            Just(Label::Positive),
            Just(Label::Negative),
            Just(Label::Neutral)
        ],
    )
        .prop_map(|(sentence_tokens, aspect_tokens, label)| Example {
            sentence_tokens,
            aspect_tokens,
            label,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn corpus_serialization_round_trips(examples in prop::collection::vec(example(), 1..20)) {
        let corpus = Corpus {
            examples: examples.clone(),
            task_kind: TaskKind::Term,
            name: "generated".to_string(),
        };
        let bytes = corpus_to_bytes(&corpus).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roundtrip.jsonl");
        std::fs::write(&path, &bytes).unwrap();
        let (reloaded, skipped) = load_corpus(&path).unwrap();
        prop_assert_eq!(skipped, 0);
        prop_assert_eq!(reloaded.examples, examples);
    }
}
