// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decoding the model's response type from individual attention heads.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::activations::collect_head_features;
use super::linear::{permuted, stratified_folds, svm_cv, FitOptions, FoldScores};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Response};
use crate::task::Dataset;
use crate::tensor::Scalar;
use crate::tokenizer::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmCell {
    pub layer: usize,
    pub head: usize,
    pub scores: FoldScores,
    /// Same pipeline and folds with permuted labels.
    pub shuffled: FoldScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmGrid {
    /// Response classes present in the data, in label order.
    pub classes: Vec<Response>,
    /// Row-major over (layer, head).
    pub cells: Vec<SvmCell>,
}

impl SvmGrid {
    pub fn cell(&self, layer: usize, head: usize) -> Option<&SvmCell> {
        self.cells.iter().find(|c| c.layer == layer && c.head == head)
    }

    /// `layer,head,accuracy,std,shuffled_mean` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,head,accuracy,std,shuffled_mean\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{:.4},{:.4},{:.4}",
                c.layer, c.head, c.scores.mean, c.scores.std, c.shuffled.mean
            );
        }
        s
    }
}

/// For every head, a one-vs-rest linear SVM over the head's outputs at all
/// prompt positions, predicting the model's own greedy response. Only the
/// response classes that occur are decoded.
pub fn svm_response_decoder<F: Scalar>(
    ckpt: &Checkpoint<F>,
    dataset: &Dataset,
    vocab: &Vocab,
    opts: &FitOptions,
) -> Result<SvmGrid> {
    let key = dataset.fingerprint() as u64;
    let mut cells = Vec::new();
    let mut classes = Vec::new();
    for layer in 0..ckpt.config().n_layers {
        let (mats, labels) = collect_head_features(ckpt, dataset, vocab, layer)?;
        let mut present: Vec<Response> = labels.iter().map(|l| l.response).collect();
        present.sort();
        present.dedup();
        if present.len() < 2 {
            return Err(Error::Domain(format!(
                "layer {layer}: every response is {:?}, nothing to decode",
                present.first()
            )));
        }
        let y: Vec<usize> = labels
            .iter()
            .map(|l| present.iter().position(|&r| r == l.response).expect("present"))
            .collect();
        let folds = stratified_folds(&y, opts.folds, key, opts.seed)?;
        let shuffled_y = permuted(&y, key, opts.seed);
        for (head, x) in mats.iter().enumerate() {
            cells.push(SvmCell {
                layer,
                head,
                scores: svm_cv(x, &y, present.len(), &folds, opts),
                shuffled: svm_cv(x, &shuffled_y, present.len(), &folds, opts),
            });
        }
        classes = present;
    }
    Ok(SvmGrid { classes, cells })
}
