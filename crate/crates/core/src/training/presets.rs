// SPDX-License-Identifier: MIT OR Apache-2.0

//! Named training configurations.
//!
//! The `table1-*` presets use GPT-2 small geometry and are far beyond a
//! single CPU; the `desk-*` presets are the scaled-down runs that finish in
//! minutes.

use std::fmt;
use std::str::FromStr;

use super::{PretrainConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Table1Finetune,
    Table1Scratch,
    DeskScratch,
    DeskPretrain,
    DeskFinetune,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Table1Finetune,
        Preset::Table1Scratch,
        Preset::DeskScratch,
        Preset::DeskPretrain,
        Preset::DeskFinetune,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Table1Finetune => "table1-finetune",
            Preset::Table1Scratch => "table1-scratch",
            Preset::DeskScratch => "desk-scratch",
            Preset::DeskPretrain => "desk-pretrain",
            Preset::DeskFinetune => "desk-finetune",
        }
    }

    /// Whether training starts from an existing checkpoint.
    pub fn needs_base(self) -> bool {
        matches!(self, Preset::Table1Finetune | Preset::DeskFinetune)
    }

    /// Task-training configuration; `None` for the pretraining preset.
    pub fn train_config(self, vocab_size: usize) -> Option<TrainConfig> {
        let full = ModelConfig {
            seed: 2024,
            ..ModelConfig::gpt2_small(vocab_size)
        };
        let desk = ModelConfig {
            seed: 2024,
            ..ModelConfig::desk(vocab_size)
        };
        let cfg = match self {
            Preset::Table1Finetune => TrainConfig {
                model: full,
                epochs: 12,
                batch_size: 4,
                lr: 5e-5,
                bound: 0.9,
                seed: 2024,
                n_train_samples: 8000,
                context_window: 256,
                eval_samples: 1000,
                eval_seed: 9001,
                curve_every: None,
                curve_samples: 500,
                stop_at_accuracy: None,
            },
            Preset::Table1Scratch => TrainConfig {
                model: ModelConfig { seed: 2026, ..full },
                epochs: 50,
                batch_size: 16,
                lr: 1e-4,
                bound: 0.7,
                seed: 2026,
                n_train_samples: 200_000,
                context_window: 256,
                eval_samples: 1000,
                eval_seed: 9001,
                curve_every: None,
                curve_samples: 500,
                stop_at_accuracy: None,
            },
            Preset::DeskScratch => TrainConfig {
                model: desk,
                epochs: DESK_EPOCHS,
                batch_size: DESK_BATCH,
                lr: DESK_LR,
                bound: 0.7,
                seed: 2026,
                n_train_samples: DESK_SAMPLES,
                context_window: DESK_WINDOW,
                eval_samples: 1000,
                eval_seed: 9001,
                curve_every: Some(DESK_CURVE_EVERY),
                curve_samples: 300,
                stop_at_accuracy: None,
            },
            Preset::DeskFinetune => TrainConfig {
                model: desk,
                epochs: DESK_EPOCHS,
                batch_size: DESK_BATCH,
                lr: DESK_FINETUNE_LR,
                bound: 0.7,
                seed: 2026,
                n_train_samples: DESK_SAMPLES,
                context_window: DESK_WINDOW,
                eval_samples: 1000,
                eval_seed: 9001,
                curve_every: Some(DESK_CURVE_EVERY),
                curve_samples: 300,
                stop_at_accuracy: Some(0.95),
            },
            Preset::DeskPretrain => return None,
        };
        Some(cfg)
    }

    /// Toy-corpus pretraining configuration; only for `desk-pretrain`.
    pub fn pretrain_config(self, vocab_size: usize) -> Option<PretrainConfig> {
        (self == Preset::DeskPretrain).then(|| PretrainConfig {
            model: ModelConfig {
                seed: 2024,
                ..ModelConfig::desk(vocab_size)
            },
            corpus_sentences: DESK_CORPUS,
            heldout_sentences: 2000,
            epochs: DESK_PRETRAIN_EPOCHS,
            batch_size: DESK_BATCH,
            lr: DESK_LR,
            seed: 77,
            context_window: DESK_WINDOW,
        })
    }
}

/// One prompt plus its answer per row; see the README on packing.
const DESK_WINDOW: usize = crate::task::PROMPT_LEN + 1;
const DESK_EPOCHS: usize = 1;
const DESK_BATCH: usize = 8;
const DESK_LR: f64 = 1e-3;
/// Half the scratch rate, which fine-tuned faster in measured runs.
const DESK_FINETUNE_LR: f64 = 5e-4;
const DESK_SAMPLES: usize = 50_000;
const DESK_CURVE_EVERY: usize = 1000;
const DESK_CORPUS: usize = 100_000;
const DESK_PRETRAIN_EPOCHS: usize = 2;

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}")))
    }
}
