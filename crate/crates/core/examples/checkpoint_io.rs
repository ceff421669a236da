// SPDX-License-Identifier: MIT OR Apache-2.0

//! Save, reload and verify a checkpoint; corrupt one byte and watch the
//! checksum catch it.

use cddm_lab::model::{Checkpoint, ModelConfig};
use cddm_lab::tokenizer::Vocab;

fn main() -> cddm_lab::Result<()> {
    let vocab = Vocab::standard();
    let ckpt = Checkpoint::<f32>::init(ModelConfig::desk(vocab.len()))?;
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path)?;
    let bytes = std::fs::read(&path).expect("read back");
    println!("{} parameters, {} bytes on disk", ckpt.params().numel(), bytes.len());

    let back = Checkpoint::<f32>::load(&path)?;
    assert_eq!(back.to_bytes()?, bytes);

    let mut bad = bytes.clone();
    bad[bytes.len() / 2] ^= 1;
    match Checkpoint::<f32>::from_bytes(&bad) {
        Err(e) => println!("corrupted copy rejected: {e}"),
        Ok(_) => unreachable!("checksum must catch a flipped bit"),
    }

    let wide: Checkpoint<f64> = Checkpoint::from_bytes(&bytes)?;
    println!("loaded as f64 for exact analysis: {} tensors", wide.params().len());
    Ok(())
}
