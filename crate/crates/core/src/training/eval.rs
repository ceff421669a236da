// SPDX-License-Identifier: MIT OR Apache-2.0

//! Task accuracy under greedy decoding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{AblationSpec, AnswerTokens, Checkpoint, Response};
use crate::task::{generate_dataset, Choice, Dataset};
use crate::tensor::Scalar;
use crate::tokenizer::Vocab;

/// Anything that answers a tokenized prompt.
pub trait ChoicePolicy: Sync {
    fn respond(&self, prompt: &[usize], answers: &AnswerTokens, ablation: Option<&AblationSpec>) -> Result<Response>;
}

impl<F: Scalar> ChoicePolicy for Checkpoint<F> {
    fn respond(&self, prompt: &[usize], answers: &AnswerTokens, ablation: Option<&AblationSpec>) -> Result<Response> {
        self.generate_choice(prompt, answers, ablation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub correct: usize,
    pub invalid: usize,
    /// Fraction correct; invalid responses count as wrong.
    pub accuracy: f64,
    #[serde(skip)]
    pub responses: Vec<Response>,
}

pub fn response_matches(r: Response, c: Choice) -> bool {
    matches!(
        (r, c),
        (Response::Left, Choice::Left) | (Response::Right, Choice::Right)
    )
}

pub fn evaluate<P: ChoicePolicy>(
    policy: &P,
    dataset: &Dataset,
    vocab: &Vocab,
    ablation: Option<&AblationSpec>,
) -> Result<EvalReport> {
    let answers = AnswerTokens::from_vocab(vocab);
    let responses = dataset
        .trials
        .par_iter()
        .map(|t| {
            let ids = vocab.encode_prompt(&t.prompt)?;
            policy.respond(&ids, &answers, ablation)
        })
        .collect::<Result<Vec<_>>>()?;
    let correct = responses
        .iter()
        .zip(&dataset.trials)
        .filter(|(r, t)| response_matches(**r, t.answer))
        .count();
    let invalid = responses.iter().filter(|r| **r == Response::Invalid).count();
    let n = dataset.len();
    Ok(EvalReport {
        n,
        correct,
        invalid,
        accuracy: correct as f64 / n as f64,
        responses,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundAccuracy {
    pub bound: f64,
    pub accuracy: f64,
    pub invalid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    pub per_bound: Vec<BoundAccuracy>,
    pub mean: f64,
    /// Population standard deviation across bounds.
    pub std: f64,
}

/// Evaluates on a fresh `n`-prompt set per bound, all drawn with `seed`.
pub fn generalization_sweep<P: ChoicePolicy>(
    policy: &P,
    vocab: &Vocab,
    bounds: &[f64],
    n: usize,
    seed: u64,
) -> Result<GeneralizationReport> {
    let per_bound = bounds
        .iter()
        .map(|&bound| {
            let ds = generate_dataset(n, bound, seed)?;
            let r = evaluate(policy, &ds, vocab, None)?;
            Ok(BoundAccuracy {
                bound,
                accuracy: r.accuracy,
                invalid: r.invalid,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let k = per_bound.len().max(1) as f64;
    let mean = per_bound.iter().map(|b| b.accuracy).sum::<f64>() / k;
    let std = (per_bound.iter().map(|b| (b.accuracy - mean).powi(2)).sum::<f64>() / k).sqrt();
    Ok(GeneralizationReport { per_bound, mean, std })
}
