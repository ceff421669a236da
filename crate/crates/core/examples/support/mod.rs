// SPDX-License-Identifier: MIT OR Apache-2.0

//! Shared setup for the analysis examples.

#![allow(dead_code)]

use std::path::Path;

use cddm_lab::model::{Checkpoint, ModelConfig};
use cddm_lab::task::PROMPT_LEN;
use cddm_lab::tokenizer::Vocab;
use cddm_lab::training::{train, TrainConfig, TrainMode};

/// Loads the checkpoint named by the first CLI argument, or trains a small
/// model for a few seconds so the example has something to look at.
pub fn model_from_args(vocab: &Vocab) -> Checkpoint<f32> {
    if let Some(path) = std::env::args().nth(1) {
        return Checkpoint::load(Path::new(&path)).expect("readable checkpoint");
    }
    eprintln!("no checkpoint given; training a small 2-layer model");
    let cfg = TrainConfig {
        model: ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 32,
            vocab_size: vocab.len(),
            max_positions: 64,
            seed: 1,
        },
        epochs: 1,
        batch_size: 8,
        lr: 3e-3,
        bound: 0.7,
        seed: 1,
        n_train_samples: 4000,
        context_window: PROMPT_LEN + 1,
        eval_samples: 200,
        eval_seed: 2,
        curve_every: None,
        curve_samples: 100,
        stop_at_accuracy: None,
    };
    train(&cfg, TrainMode::FromScratch, vocab, None).expect("training").last
}
