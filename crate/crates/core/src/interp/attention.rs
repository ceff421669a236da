// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attention maps averaged over prompts.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{AblationSpec, Checkpoint, ForwardOptions};
use crate::tensor::{Scalar, Tensor};

/// Mean post-softmax weights of `(layer, head)` over equal-length prompts;
/// row `i` is the destination token, column `j` the source.
pub fn avg_attention<F: Scalar>(
    ckpt: &Checkpoint<F>,
    prompts: &[Vec<usize>],
    layer: usize,
    head: usize,
) -> Result<Tensor<f64>> {
    AblationSpec::single(layer, head).validate(ckpt.config())?;
    let Some(first) = prompts.first() else {
        return Err(Error::Contract("no prompts to average".into()));
    };
    let t = first.len();
    if prompts.iter().any(|p| p.len() != t) {
        return Err(Error::dim("avg_attention", "prompts differ in length"));
    }
    let maps = prompts
        .par_iter()
        .map(|p| {
            let out = ckpt.forward(
                p,
                &ForwardOptions {
                    capture: true,
                    ablation: None,
                },
            )?;
            let w = &out.capture.expect("capture requested").attn_weights[layer][head];
            Ok(w.data().iter().map(|x| x.f64()).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = vec![0.0; t * t];
    for m in &maps {
        for (acc, v) in mean.iter_mut().zip(m) {
            *acc += v;
        }
    }
    let n = maps.len() as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    Tensor::new(vec![t, t], mean)
}

/// Mean over destination rows at or after the last of `columns` of the
/// total weight those rows place on `columns`.
pub fn column_mass(map: &Tensor<f64>, columns: &[usize]) -> Result<f64> {
    let (t, _) = map.dims2()?;
    let start = columns.iter().copied().max().unwrap_or(0);
    if start >= t {
        return Err(Error::Index(format!("column {start} of a {t}-token map")));
    }
    let total: f64 = (start..t)
        .map(|r| columns.iter().map(|&c| map.at2(r, c)).sum::<f64>())
        .sum();
    Ok(total / (t - start) as f64)
}
