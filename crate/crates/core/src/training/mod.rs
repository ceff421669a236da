// SPDX-License-Identifier: MIT OR Apache-2.0

//! Next-token training on packed task text, toy-corpus pretraining, and
//! accuracy evaluation.

mod eval;
mod presets;
mod stream;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use eval::{
    evaluate, generalization_sweep, response_matches, BoundAccuracy, ChoicePolicy, EvalReport, GeneralizationReport,
};
pub use presets::Preset;
pub use stream::{chunk_stream, make_lm_stream, make_text_stream, LmRow, LmStream};

use crate::corpus::generate_corpus;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelConfig};
use crate::task::{generate_dataset, trial_rng, Dataset};
use crate::tensor::{Adam, AdamConfig, Gradients};
use crate::tokenizer::Vocab;

const SHUFFLE_SALT: u64 = 0x5348_5546_464c_4531;
const HELDOUT_SALT: u64 = 0x4845_4c44_4f55_5431;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    /// Rows of `context_window` tokens per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    pub bound: f64,
    pub seed: u64,
    pub n_train_samples: usize,
    pub context_window: usize,
    /// Size of the held-out set used for per-epoch accuracy.
    pub eval_samples: usize,
    pub eval_seed: u64,
    /// Evaluate on the first `curve_samples` held-out prompts every this
    /// many consumed training samples.
    #[serde(default)]
    pub curve_every: Option<usize>,
    #[serde(default = "default_curve_samples")]
    pub curve_samples: usize,
    /// Stop as soon as a learning-curve evaluation reaches this accuracy.
    #[serde(default)]
    pub stop_at_accuracy: Option<f64>,
}

fn default_curve_samples() -> usize {
    500
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let positive = [
            (self.epochs, "epochs"),
            (self.batch_size, "batch_size"),
            (self.n_train_samples, "n_train_samples"),
            (self.eval_samples, "eval_samples"),
            (self.curve_samples, "curve_samples"),
        ];
        if let Some((_, name)) = positive.iter().find(|(v, _)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.context_window < 2 || self.context_window > self.model.max_positions {
            return Err(Error::Config(format!(
                "context window {} must lie in [2, {}]",
                self.context_window, self.model.max_positions
            )));
        }
        if self.eval_seed == self.seed {
            return Err(Error::Config(
                "evaluation seed must differ from the training seed".into(),
            ));
        }
        if self.curve_every == Some(0) {
            return Err(Error::Config("curve_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum TrainMode {
    FromScratch,
    FineTune(Checkpoint<f32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub samples_seen: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub epochs: Vec<EpochRecord>,
    pub curve: Vec<CurvePoint>,
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub samples_seen: u64,
    pub stopped_early: bool,
    pub dataset_fingerprint: u32,
}

impl Metrics {
    /// `epoch,loss,accuracy` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,accuracy\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:.6},{:.4}", e.epoch, e.loss, e.accuracy);
        }
        s
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from("samples_seen,accuracy\n");
        for p in &self.curve {
            let _ = writeln!(s, "{},{:.4}", p.samples_seen, p.accuracy);
        }
        s
    }

    /// Training samples consumed when the learning curve first reached
    /// `threshold`.
    pub fn samples_to_reach(&self, threshold: f64) -> Option<u64> {
        self.curve
            .iter()
            .find(|p| p.accuracy >= threshold)
            .map(|p| p.samples_seen)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the highest end-of-epoch accuracy.
    pub best: Checkpoint<f32>,
    pub last: Checkpoint<f32>,
    pub metrics: Metrics,
}

/// Runs one epoch of Adam over `rows`. `after_batch` sees the updated model
/// and the number of task answers in the batch; returning `true` stops early.
fn run_epoch(
    ckpt: &mut Checkpoint<f32>,
    adam: &mut Adam<f32>,
    rows: &[LmRow],
    batch_size: usize,
    shuffle_seed: u64,
    epoch: usize,
    mut after_batch: impl FnMut(&Checkpoint<f32>, usize) -> Result<bool>,
) -> Result<(f64, bool)> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut trial_rng(shuffle_seed ^ SHUFFLE_SALT, epoch as u64));
    let mut loss_sum = 0.0;
    let mut count_sum = 0usize;
    for (step, batch) in order.chunks(batch_size).enumerate() {
        let parts = batch
            .par_iter()
            .map(|&i| {
                let row = &rows[i];
                let (loss, grads) = ckpt.loss_and_grads(&row.input, &row.target)?;
                Ok((loss, row.target_count(), grads))
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, step {step}: {msg}")),
                other => other,
            })?;
        let total: usize = parts.iter().map(|p| p.1).sum();
        if total == 0 {
            continue;
        }
        let mut grads = Gradients::empty(ckpt.params().len());
        for (loss, count, g) in &parts {
            grads.add_scaled(g, *count as f32 / total as f32)?;
            loss_sum += loss * *count as f64;
        }
        count_sum += total;
        adam.step(ckpt.params_mut(), &grads)?;
        let answers = batch.iter().map(|&i| rows[i].answers).sum();
        if after_batch(ckpt, answers)? {
            return Ok((loss_sum / count_sum as f64, true));
        }
    }
    Ok((loss_sum / count_sum.max(1) as f64, false))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Where a run writes checkpoints and metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDirs {
    pub checkpoints: PathBuf,
    pub metrics: PathBuf,
}

impl RunDirs {
    /// Everything in one directory.
    pub fn flat(dir: &Path) -> Self {
        RunDirs {
            checkpoints: dir.to_path_buf(),
            metrics: dir.to_path_buf(),
        }
    }

    /// `root/checkpoints` and `root/metrics`.
    pub fn under(root: &Path) -> Self {
        RunDirs {
            checkpoints: root.join("checkpoints"),
            metrics: root.join("metrics"),
        }
    }

    pub fn create(&self) -> Result<()> {
        for d in [&self.checkpoints, &self.metrics] {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        Ok(())
    }
}

/// Trains on `n_train_samples` freshly generated trials. With `dirs`,
/// per-epoch checkpoints and `best.ckpt` go to `dirs.checkpoints`, and
/// `metrics.csv`, `curve.csv` and `summary.json` to `dirs.metrics`.
pub fn train(config: &TrainConfig, mode: TrainMode, vocab: &Vocab, dirs: Option<&RunDirs>) -> Result<TrainOutcome> {
    config.validate()?;
    if config.model.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "model vocabulary {} differs from tokenizer vocabulary {}",
            config.model.vocab_size,
            vocab.len()
        )));
    }
    let mut ckpt = match mode {
        TrainMode::FromScratch => Checkpoint::init(config.model)?,
        TrainMode::FineTune(base) => {
            base.check_config(&config.model)?;
            base
        }
    };
    let train_set = generate_dataset(config.n_train_samples, config.bound, config.seed)?;
    let eval_set = generate_dataset(config.eval_samples, config.bound, config.eval_seed)?;
    let curve_set = Dataset {
        trials: eval_set.trials[..config.curve_samples.min(eval_set.len())].to_vec(),
        ..eval_set.clone()
    };
    let stream = make_lm_stream(&train_set, vocab, config.context_window)?;
    let fingerprint = train_set.fingerprint();
    ckpt.meta.dataset_fingerprint = fingerprint;
    if let Some(d) = dirs {
        d.create()?;
    }

    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), ckpt.params());
    let mut metrics = Metrics {
        epochs: Vec::new(),
        curve: Vec::new(),
        best_epoch: 0,
        best_accuracy: f64::NEG_INFINITY,
        samples_seen: 0,
        stopped_early: false,
        dataset_fingerprint: fingerprint,
    };
    let mut best = ckpt.clone();
    let mut next_curve = config.curve_every.map(|e| e as u64);

    for epoch in 1..=config.epochs {
        let mut samples_seen = metrics.samples_seen;
        let mut curve = std::mem::take(&mut metrics.curve);
        let (loss, stopped) = run_epoch(
            &mut ckpt,
            &mut adam,
            &stream.rows,
            config.batch_size,
            config.seed,
            epoch,
            |model, answers| {
                samples_seen += answers as u64;
                let (Some(every), Some(next)) = (config.curve_every, next_curve.as_mut()) else {
                    return Ok(false);
                };
                if samples_seen < *next {
                    return Ok(false);
                }
                while *next <= samples_seen {
                    *next += every as u64;
                }
                let acc = evaluate(model, &curve_set, vocab, None)?.accuracy;
                curve.push(CurvePoint {
                    samples_seen,
                    accuracy: acc,
                });
                Ok(config.stop_at_accuracy.is_some_and(|t| acc >= t))
            },
        )?;
        metrics.curve = curve;
        metrics.samples_seen = samples_seen;
        ckpt.meta.epochs_seen += 1;
        ckpt.meta.samples_seen = samples_seen;
        let accuracy = evaluate(&ckpt, &eval_set, vocab, None)?.accuracy;
        metrics.epochs.push(EpochRecord { epoch, loss, accuracy });
        if accuracy > metrics.best_accuracy {
            metrics.best_accuracy = accuracy;
            metrics.best_epoch = epoch;
            best = ckpt.clone();
        }
        if let Some(d) = dirs {
            ckpt.save(&d.checkpoints.join(format!("epoch_{epoch:03}.ckpt")))?;
            best.save(&d.checkpoints.join("best.ckpt"))?;
        }
        if stopped {
            metrics.stopped_early = true;
            break;
        }
    }
    if let Some(d) = dirs {
        write_file(&d.metrics.join("metrics.csv"), metrics.to_csv().as_bytes())?;
        write_file(&d.metrics.join("curve.csv"), metrics.curve_csv().as_bytes())?;
        write_file(
            &d.metrics.join("summary.json"),
            serde_json::to_string_pretty(&metrics)?.as_bytes(),
        )?;
    }
    Ok(TrainOutcome {
        best,
        last: ckpt,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub model: ModelConfig,
    /// Number of generated sentence groups.
    pub corpus_sentences: usize,
    pub heldout_sentences: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub context_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub heldout_loss: f64,
    pub heldout_perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainMetrics {
    pub initial_heldout_perplexity: f64,
    pub epochs: Vec<PretrainEpoch>,
}

impl PretrainMetrics {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,heldout_loss,heldout_perplexity\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.4}",
                e.epoch, e.loss, e.heldout_loss, e.heldout_perplexity
            );
        }
        s
    }
}

fn mean_loss(ckpt: &Checkpoint<f32>, rows: &[LmRow]) -> Result<f64> {
    let parts = rows
        .par_iter()
        .map(|r| Ok((ckpt.loss(&r.input, &r.target)?, r.target_count())))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = parts.iter().map(|p| p.1).sum();
    Ok(parts.iter().map(|(l, c)| l * *c as f64).sum::<f64>() / n.max(1) as f64)
}

/// Trains a fresh model on the generated toy corpus, tracking held-out
/// perplexity after every epoch.
pub fn pretrain_toy_corpus(
    config: &PretrainConfig,
    vocab: &Vocab,
    dirs: Option<&RunDirs>,
) -> Result<(Checkpoint<f32>, PretrainMetrics)> {
    config.model.validate()?;
    if config.corpus_sentences == 0 || config.heldout_sentences == 0 || config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::Config("pretraining sizes must be positive".into()));
    }
    if config.context_window < 2 || config.context_window > config.model.max_positions {
        return Err(Error::Config(format!(
            "context window {} out of range",
            config.context_window
        )));
    }
    if config.model.vocab_size != vocab.len() {
        return Err(Error::Config(
            "model vocabulary differs from tokenizer vocabulary".into(),
        ));
    }
    let corpus = generate_corpus(config.corpus_sentences, config.seed);
    let heldout = generate_corpus(config.heldout_sentences, config.seed ^ HELDOUT_SALT);
    let train_rows = make_text_stream(corpus.iter().map(String::as_str), vocab, config.context_window)?.rows;
    let heldout_rows = make_text_stream(heldout.iter().map(String::as_str), vocab, config.context_window)?.rows;

    let mut ckpt = Checkpoint::<f32>::init(config.model)?;
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), ckpt.params());
    let initial = mean_loss(&ckpt, &heldout_rows)?;
    let mut metrics = PretrainMetrics {
        initial_heldout_perplexity: initial.exp(),
        epochs: Vec::new(),
    };
    for epoch in 1..=config.epochs {
        let (loss, _) = run_epoch(
            &mut ckpt,
            &mut adam,
            &train_rows,
            config.batch_size,
            config.seed,
            epoch,
            |_, _| Ok(false),
        )?;
        let heldout_loss = mean_loss(&ckpt, &heldout_rows)?;
        ckpt.meta.epochs_seen += 1;
        metrics.epochs.push(PretrainEpoch {
            epoch,
            loss,
            heldout_loss,
            heldout_perplexity: heldout_loss.exp(),
        });
    }
    if let Some(d) = dirs {
        d.create()?;
        ckpt.save(&d.checkpoints.join("pretrained.ckpt"))?;
        write_file(&d.metrics.join("pretrain_metrics.csv"), metrics.to_csv().as_bytes())?;
        write_file(
            &d.metrics.join("summary.json"),
            serde_json::to_string_pretty(&metrics)?.as_bytes(),
        )?;
    }
    Ok((ckpt, metrics))
}
