// SPDX-License-Identifier: MIT OR Apache-2.0

//! Accuracy on test sets drawn with different coherence bounds.
//!
//! `cargo run --release --example generalization -- [checkpoint]`

mod support;

use cddm_lab::tokenizer::Vocab;
use cddm_lab::training::generalization_sweep;

fn main() -> cddm_lab::Result<()> {
    let vocab = Vocab::standard();
    let model = support::model_from_args(&vocab);
    let report = generalization_sweep(&model, &vocab, &[0.3, 0.5, 0.7, 0.9, 1.0], 500, 9001)?;
    for b in &report.per_bound {
        println!(
            "bound {:.1}: accuracy {:.3}, invalid {}",
            b.bound, b.accuracy, b.invalid
        );
    }
    println!("mean {:.3}, std {:.3}", report.mean, report.std);
    Ok(())
}
