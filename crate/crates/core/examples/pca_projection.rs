// SPDX-License-Identifier: MIT OR Apache-2.0

//! Project hidden-state trajectories onto their first two principal
//! components.
//!
//! `cargo run --release --example pca_projection -- [checkpoint]`

mod support;

use cddm_lab::interp::{collect_hidden_states, project_hidden_states};
use cddm_lab::task::generate_dataset;
use cddm_lab::tokenizer::Vocab;

fn main() -> cddm_lab::Result<()> {
    let vocab = Vocab::standard();
    let model = support::model_from_args(&vocab);
    let data = generate_dataset(100, 0.7, 9001)?;
    let acts = collect_hidden_states(&model, &data, &vocab, model.config().n_layers - 1)?;
    let p = project_hidden_states(&acts)?;
    let total: f64 = p.pca.variances.sum();
    println!(
        "{} points; PC1 explains {:.1}%, PC2 {:.1}%",
        p.rows.len(),
        100.0 * p.pca.variances[0] / total,
        100.0 * p.pca.variances[1] / total
    );
    for line in p.to_csv().lines().take(6) {
        println!("{line}");
    }
    Ok(())
}
