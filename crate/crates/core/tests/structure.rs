// SPDX-License-Identifier: MIT OR Apache-2.0

//! Model-level invariants checked against hand-written oracles.

mod common;

use cddm_lab::interp::ablation_sweep;
use cddm_lab::model::{AblationSpec, Checkpoint, ForwardOptions};
use cddm_lab::task::generate_dataset;
use cddm_lab::tokenizer::Vocab;
use cddm_lab::training::evaluate;
use common::*;
use proptest::prelude::*;

fn prompt_model(seed: u64) -> Checkpoint<f64> {
    let vocab = Vocab::standard();
    let mut ckpt = Checkpoint::<f64>::init(tiny_config(vocab.len(), seed)).unwrap();
    let mut r = rng(seed);
    let ids: Vec<_> = ckpt.params().ids().collect();
    for id in ids {
        for x in ckpt.params_mut().get_mut(id).data_mut() {
            *x += rand::Rng::random_range(&mut r, -0.2..0.2);
        }
    }
    ckpt
}

fn prompts(n: usize, seed: u64) -> Vec<Vec<usize>> {
    let vocab = Vocab::standard();
    generate_dataset(n, 0.7, seed)
        .unwrap()
        .trials
        .iter()
        .map(|t| vocab.encode_prompt(&t.prompt).unwrap())
        .collect()
}

#[test]
fn future_tokens_never_change_past_logits() {
    assert_eq!(causal_violation(&jittered_model(3), 100, 11).unwrap(), 0.0);
}

#[test]
fn attention_rows_are_distributions() {
    let err = attention_row_sum_error(&prompt_model(4), &prompts(20, 1)).unwrap();
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn all_heads_ablated_matches_attention_free_oracle() {
    let ckpt = prompt_model(5);
    let all = AblationSpec::all(ckpt.config());
    for tokens in prompts(5, 2) {
        let got = ckpt
            .forward(
                &tokens,
                &ForwardOptions {
                    capture: false,
                    ablation: Some(&all),
                },
            )
            .unwrap()
            .logits;
        let want = attention_free_logits(&ckpt, &tokens);
        let err = got
            .data()
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-10, "{err:e}");
    }
}

#[test]
fn zeroed_projection_makes_ablation_a_no_op() {
    let mut ckpt = prompt_model(6);
    ckpt.zero_head_projection(1, 0).unwrap();
    let spec = AblationSpec::single(1, 0);
    for tokens in prompts(5, 3) {
        let plain = ckpt.forward(&tokens, &ForwardOptions::default()).unwrap().logits;
        let ablated = ckpt
            .forward(
                &tokens,
                &ForwardOptions {
                    capture: false,
                    ablation: Some(&spec),
                },
            )
            .unwrap()
            .logits;
        assert_eq!(plain.data(), ablated.data());
    }
}

#[test]
fn ablation_baseline_is_plain_evaluation() {
    let vocab = Vocab::standard();
    let mut ckpt = Checkpoint::<f32>::init(tiny_config(vocab.len(), 8)).unwrap();
    // Push the answer logits apart so responses are not all invalid.
    let left = vocab.id("left").unwrap();
    let right = vocab.id("right").unwrap();
    let bias = ckpt.param_mut("lm_bias").unwrap().data_mut();
    bias[left] = 3.0;
    bias[right] = 3.0;
    let ds = generate_dataset(60, 0.7, 4).unwrap();
    let grid = ablation_sweep(&ckpt, &ds, &vocab).unwrap();
    let plain = evaluate(&ckpt, &ds, &vocab, None).unwrap();
    assert_eq!(grid.baseline, plain.accuracy);
    for l in 0..2 {
        for h in 0..2 {
            let one = evaluate(&ckpt, &ds, &vocab, Some(&AblationSpec::single(l, h))).unwrap();
            assert_eq!(grid.at(l, h), one.accuracy);
        }
    }
}

#[test]
fn checkpoint_files_round_trip_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ckpt = prompt_model(9).cast::<f32>();
    ckpt.save(&path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let back = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(back, ckpt);
    back.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn datasets_are_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    generate_dataset(300, 0.5, 42).unwrap().write_jsonl(&a).unwrap();
    generate_dataset(300, 0.5, 42).unwrap().write_jsonl(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(
        generate_dataset(300, 0.5, 43).unwrap().to_jsonl(),
        generate_dataset(300, 0.5, 42).unwrap().to_jsonl()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn causality_holds_for_random_models(seed in any::<u64>()) {
        prop_assert_eq!(causal_violation(&jittered_model(seed), 5, seed ^ 1).unwrap(), 0.0);
    }

    #[test]
    fn pca_matches_its_definition(seed in any::<u64>(), n in 3usize..40, d in 1usize..8) {
        let x = random_matrix(&mut rng(seed), n, d);
        if let Err(e) = pca_violation(&x) {
            return Err(TestCaseError::fail(e));
        }
    }

    #[test]
    fn pca_finds_a_line(seed in any::<u64>(), n in 3usize..40, d in 2usize..8) {
        if let Err(e) = pca_rank_one_violation(&mut rng(seed), n, d) {
            return Err(TestCaseError::fail(e));
        }
    }
}
