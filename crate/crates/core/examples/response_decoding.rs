// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decode the model's response type from each head's outputs with a
//! one-vs-rest linear SVM.
//!
//! `cargo run --release --example response_decoding -- [checkpoint]`

mod support;

use cddm_lab::interp::{svm_response_decoder, FitOptions};
use cddm_lab::task::generate_dataset;
use cddm_lab::tokenizer::Vocab;

fn main() -> cddm_lab::Result<()> {
    let vocab = Vocab::standard();
    let model = support::model_from_args(&vocab);
    let data = generate_dataset(300, 0.7, 9001)?;
    let opts = FitOptions {
        max_iter: 200,
        ..FitOptions::default()
    };
    match svm_response_decoder(&model, &data, &vocab, &opts) {
        Ok(grid) => {
            println!("classes: {:?}", grid.classes);
            print!("{}", grid.to_csv());
        }
        // An untrained model may give the same answer to every prompt.
        Err(e) => println!("nothing to decode: {e}"),
    }
    Ok(())
}
