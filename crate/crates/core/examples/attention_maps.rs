// SPDX-License-Identifier: MIT OR Apache-2.0

//! Average attention of every first-layer head and how much of it lands on
//! the four evidence numbers.
//!
//! `cargo run --release --example attention_maps -- [checkpoint]`

mod support;

use cddm_lab::interp::{avg_attention, column_mass, svg};
use cddm_lab::task::{generate_dataset, POSITIONS, PROMPT_LEN};
use cddm_lab::tokenizer::Vocab;

fn main() -> cddm_lab::Result<()> {
    let vocab = Vocab::standard();
    let model = support::model_from_args(&vocab);
    let prompts = generate_dataset(200, 0.7, 9001)?
        .trials
        .iter()
        .map(|t| vocab.encode_prompt(&t.prompt))
        .collect::<cddm_lab::Result<Vec<_>>>()?;
    let uniform = 4.0 / PROMPT_LEN as f64;
    for head in 0..model.config().n_heads {
        let map = avg_attention(&model, &prompts, 0, head)?;
        let mass = column_mass(&map, &POSITIONS.numbers())?;
        println!("layer 0 head {head}: mass on numbers {mass:.3} (uniform reference {uniform:.3})");
        if head == 0 {
            let rows: Vec<Vec<f64>> = (0..PROMPT_LEN).map(|i| map.row(i).to_vec()).collect();
            let out = std::env::temp_dir().join("cddm_attention_l0_h0.svg");
            std::fs::write(&out, svg::heatmap("layer 0 head 0", &rows, 0.0, 1.0)).expect("write svg");
            println!("heatmap written to {}", out.display());
        }
    }
    Ok(())
}
