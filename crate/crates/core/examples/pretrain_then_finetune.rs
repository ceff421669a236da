// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pretrain on the toy corpus, then fine-tune on the task and report how
//! many task samples it took to reach 90%.
//!
//! `cargo run --release --example pretrain_then_finetune`

use cddm_lab::task::generate_dataset;
use cddm_lab::tokenizer::Vocab;
use cddm_lab::training::{evaluate, pretrain_toy_corpus, train, Preset, TrainMode};

fn main() -> cddm_lab::Result<()> {
    let vocab = Vocab::standard();
    let pre = Preset::DeskPretrain
        .pretrain_config(vocab.len())
        .expect("pretraining preset");
    let (base, m) = pretrain_toy_corpus(&pre, &vocab, None)?;
    println!("held-out perplexity: {:.2} at init", m.initial_heldout_perplexity);
    for e in &m.epochs {
        println!("  epoch {}: {:.3}", e.epoch, e.heldout_perplexity);
    }

    let probe_set = generate_dataset(500, 0.7, 9001)?;
    let before = evaluate(&base, &probe_set, &vocab, None)?;
    println!(
        "task accuracy before fine-tuning {:.3} ({} invalid)",
        before.accuracy, before.invalid
    );

    let cfg = Preset::DeskFinetune.train_config(vocab.len()).expect("task preset");
    let out = train(&cfg, TrainMode::FineTune(base), &vocab, None)?;
    println!("{}", out.metrics.curve_csv());
    println!("samples to 90%: {:?}", out.metrics.samples_to_reach(0.9));
    Ok(())
}
