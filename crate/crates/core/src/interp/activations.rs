// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-trial activations with behavioral labels attached.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{AnswerTokens, Checkpoint, ForwardOptions, Response};
use crate::task::{Choice, Coherence, Context, Dataset};
use crate::tensor::Scalar;
use crate::tokenizer::Vocab;

/// What the model and the task say about one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialLabels {
    pub context: Context,
    pub coh_m: Coherence,
    pub coh_c: Coherence,
    /// Ground-truth answer.
    pub choice: Choice,
    /// The model's greedy answer.
    pub response: Response,
}

/// Binary behavioral variable a probe can decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variable {
    Context,
    CohMotionSign,
    CohColorSign,
    Choice,
}

impl Variable {
    pub const ALL: [Variable; 4] = [
        Variable::Context,
        Variable::CohMotionSign,
        Variable::CohColorSign,
        Variable::Choice,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variable::Context => "context",
            Variable::CohMotionSign => "coh_m",
            Variable::CohColorSign => "coh_c",
            Variable::Choice => "choice",
        }
    }

    /// Color context, positive coherence and a right answer are `true`. A
    /// zero coherence counts as not positive.
    pub fn binarize(self, l: &TrialLabels) -> bool {
        match self {
            Variable::Context => l.context == Context::Color,
            Variable::CohMotionSign => l.coh_m.is_positive(),
            Variable::CohColorSign => l.coh_c.is_positive(),
            Variable::Choice => l.choice == Choice::Right,
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variable::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown probe variable {s:?}")))
    }
}

/// `trials × features` activations at one (layer, token) site.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    pub layer: usize,
    pub token: usize,
    pub features: DMatrix<f64>,
    pub labels: Vec<TrialLabels>,
}

impl ActivationMatrix {
    pub fn new(layer: usize, token: usize, features: DMatrix<f64>, labels: Vec<TrialLabels>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::dim(
                "activations",
                format!("{} rows for {} labels", features.nrows(), labels.len()),
            ));
        }
        Ok(ActivationMatrix {
            layer,
            token,
            features,
            labels,
        })
    }

    pub fn trials(&self) -> usize {
        self.labels.len()
    }

    pub fn binary_labels(&self, variable: Variable) -> Vec<bool> {
        self.labels.iter().map(|l| variable.binarize(l)).collect()
    }
}

struct TrialCapture {
    labels: TrialLabels,
    /// `[layer]` residual stream, `T × d_model`, row-major.
    hidden: Vec<Vec<f64>>,
    /// `[layer][head]` head output, `T × d_head`, row-major.
    heads: Vec<Vec<Vec<f64>>>,
}

fn capture_all<F: Scalar>(
    ckpt: &Checkpoint<F>,
    dataset: &Dataset,
    vocab: &Vocab,
    keep_hidden: Option<usize>,
    keep_heads: Option<usize>,
) -> Result<(usize, Vec<TrialCapture>)> {
    if dataset.is_empty() {
        return Err(Error::Contract("no trials to collect activations from".into()));
    }
    let answers = AnswerTokens::from_vocab(vocab);
    let to_f64 = |t: &crate::tensor::Tensor<F>| t.data().iter().map(|x| x.f64()).collect::<Vec<_>>();
    let rows = dataset
        .trials
        .par_iter()
        .map(|t| {
            let ids = vocab.encode_prompt(&t.prompt)?;
            let out = ckpt.forward(
                &ids,
                &ForwardOptions {
                    capture: true,
                    ablation: None,
                },
            )?;
            let cap = out.capture.expect("capture requested");
            let response = answers.classify(crate::model::argmax(out.logits.row(ids.len() - 1)));
            let hidden = keep_hidden
                .map(|l| vec![to_f64(&cap.hidden_states[l])])
                .unwrap_or_default();
            let heads = keep_heads
                .map(|l| vec![cap.attn_outputs[l].iter().map(to_f64).collect()])
                .unwrap_or_default();
            Ok(TrialCapture {
                labels: TrialLabels {
                    context: t.trial.context,
                    coh_m: t.trial.coh_m,
                    coh_c: t.trial.coh_c,
                    choice: t.answer,
                    response,
                },
                hidden,
                heads,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((vocab.encode_prompt(&dataset.trials[0].prompt)?.len(), rows))
}

fn check_layer(ckpt_layers: usize, layer: usize) -> Result<()> {
    if layer >= ckpt_layers {
        return Err(Error::Index(format!("layer {layer} of a {ckpt_layers}-layer model")));
    }
    Ok(())
}

/// Residual-stream output of block `layer`, one matrix per prompt token.
pub fn collect_hidden_states<F: Scalar>(
    ckpt: &Checkpoint<F>,
    dataset: &Dataset,
    vocab: &Vocab,
    layer: usize,
) -> Result<Vec<ActivationMatrix>> {
    check_layer(ckpt.config().n_layers, layer)?;
    let d = ckpt.config().d_model;
    let (t_len, caps) = capture_all(ckpt, dataset, vocab, Some(layer), None)?;
    let labels: Vec<TrialLabels> = caps.iter().map(|c| c.labels).collect();
    (0..t_len)
        .map(|tok| {
            let m = DMatrix::from_fn(caps.len(), d, |i, j| caps[i].hidden[0][tok * d + j]);
            ActivationMatrix::new(layer, tok, m, labels.clone())
        })
        .collect()
}

/// Per-head outputs of `layer` concatenated over all prompt positions:
/// one `trials × (T·d_head)` matrix per head.
pub fn collect_head_features<F: Scalar>(
    ckpt: &Checkpoint<F>,
    dataset: &Dataset,
    vocab: &Vocab,
    layer: usize,
) -> Result<(Vec<DMatrix<f64>>, Vec<TrialLabels>)> {
    check_layer(ckpt.config().n_layers, layer)?;
    let (_, caps) = capture_all(ckpt, dataset, vocab, None, Some(layer))?;
    let labels = caps.iter().map(|c| c.labels).collect();
    let width = caps[0].heads[0][0].len();
    let mats = (0..ckpt.config().n_heads)
        .map(|h| DMatrix::from_fn(caps.len(), width, |i, j| caps[i].heads[0][h][j]))
        .collect();
    Ok((mats, labels))
}
