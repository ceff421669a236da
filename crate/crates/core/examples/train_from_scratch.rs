// SPDX-License-Identifier: MIT OR Apache-2.0

//! Train the desk-scale model on the task from random initialization.
//!
//! `cargo run --release --example train_from_scratch -- [samples] [out_dir]`
//! Defaults to the full `desk-scratch` preset (several minutes on one core).

use std::path::PathBuf;

use cddm_lab::tokenizer::Vocab;
use cddm_lab::training::{train, Preset, RunDirs, TrainMode};

fn main() -> cddm_lab::Result<()> {
    let vocab = Vocab::standard();
    let mut cfg = Preset::DeskScratch.train_config(vocab.len()).expect("task preset");
    let mut args = std::env::args().skip(1);
    if let Some(n) = args.next() {
        cfg.n_train_samples = n.parse().expect("sample count");
    }
    let dirs = args.next().map(|d| RunDirs::flat(&PathBuf::from(d)));

    let out = train(&cfg, TrainMode::FromScratch, &vocab, dirs.as_ref())?;
    print!("{}", out.metrics.to_csv());
    match out.metrics.samples_to_reach(0.9) {
        Some(s) => println!("90% on the learning curve after {s} samples"),
        None => println!("learning curve never reached 90%"),
    }
    Ok(())
}
