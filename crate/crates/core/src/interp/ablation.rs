// SPDX-License-Identifier: MIT OR Apache-2.0

//! Single-head zero-ablation sweeps.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{AblationSpec, Checkpoint};
use crate::task::Dataset;
use crate::tensor::Scalar;
use crate::tokenizer::Vocab;
use crate::training::evaluate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub n_layers: usize,
    pub n_heads: usize,
    pub baseline: f64,
    /// Row-major `[layer][head]` accuracy with that head ablated.
    pub accuracy: Vec<f64>,
}

impl AblationGrid {
    pub fn at(&self, layer: usize, head: usize) -> f64 {
        self.accuracy[layer * self.n_heads + head]
    }

    /// Largest accuracy drop relative to the baseline, with its head.
    pub fn largest_drop(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for l in 0..self.n_layers {
            for h in 0..self.n_heads {
                let drop = self.baseline - self.at(l, h);
                if drop > best.2 {
                    best = (l, h, drop);
                }
            }
        }
        best
    }

    /// `layer,head,accuracy`; the baseline row leaves layer and head empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,head,accuracy\n");
        let _ = writeln!(s, ",,{:.4}", self.baseline);
        for l in 0..self.n_layers {
            for h in 0..self.n_heads {
                let _ = writeln!(s, "{l},{h},{:.4}", self.at(l, h));
            }
        }
        s
    }

    /// Grid as rows for a heatmap.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.accuracy.chunks(self.n_heads).map(<[f64]>::to_vec).collect()
    }
}

/// Accuracy on `dataset` with each head zero-ablated in turn.
pub fn ablation_sweep<F: Scalar>(ckpt: &Checkpoint<F>, dataset: &Dataset, vocab: &Vocab) -> Result<AblationGrid> {
    let c = ckpt.config();
    let baseline = evaluate(ckpt, dataset, vocab, None)?.accuracy;
    let mut accuracy = Vec::with_capacity(c.n_layers * c.n_heads);
    for l in 0..c.n_layers {
        for h in 0..c.n_heads {
            let spec = AblationSpec::single(l, h);
            accuracy.push(evaluate(ckpt, dataset, vocab, Some(&spec))?.accuracy);
        }
    }
    Ok(AblationGrid {
        n_layers: c.n_layers,
        n_heads: c.n_heads,
        baseline,
        accuracy,
    })
}
