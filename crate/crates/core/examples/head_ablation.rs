// SPDX-License-Identifier: MIT OR Apache-2.0

//! Zero-ablate each attention head and measure the accuracy change.
//!
//! `cargo run --release --example head_ablation -- [checkpoint]`

mod support;

use cddm_lab::interp::ablation_sweep;
use cddm_lab::task::generate_dataset;
use cddm_lab::tokenizer::Vocab;

fn main() -> cddm_lab::Result<()> {
    let vocab = Vocab::standard();
    let model = support::model_from_args(&vocab);
    let data = generate_dataset(500, 0.7, 9001)?;
    let grid = ablation_sweep(&model, &data, &vocab)?;
    print!("{}", grid.to_csv());
    let (l, h, drop) = grid.largest_drop();
    println!("most important head: layer {l} head {h} (accuracy drops by {drop:.3})");
    Ok(())
}
