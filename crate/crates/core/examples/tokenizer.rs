// SPDX-License-Identifier: MIT OR Apache-2.0

//! The fixed word-level vocabulary and prompt encoding.

use cddm_lab::task::{generate_dataset, POSITIONS};
use cddm_lab::tokenizer::Vocab;

fn main() -> cddm_lab::Result<()> {
    let vocab = Vocab::standard();
    println!("{} tokens; pad={} unk={}", vocab.len(), vocab.pad_id(), vocab.unk_id());

    let trial = &generate_dataset(1, 0.7, 5)?.trials[0];
    let ids = vocab.encode_prompt(&trial.prompt)?;
    println!("{ids:?}");
    assert_eq!(vocab.decode(&ids), trial.prompt);

    let numbers: Vec<&str> = POSITIONS
        .numbers()
        .iter()
        .map(|&p| vocab.token(ids[p]).unwrap())
        .collect();
    println!("context word: {}", vocab.token(ids[POSITIONS.ctx_word]).unwrap());
    println!("evidence tokens: {numbers:?}");
    println!("unknown words map to {}", vocab.encode("choose banana")[1]);
    Ok(())
}
