// SPDX-License-Identifier: MIT OR Apache-2.0

//! Logistic-regression probes of behavioral variables.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::activations::{ActivationMatrix, Variable};
use super::linear::{logistic_cv, permuted, stratified_folds, FitOptions, FoldScores};
use crate::error::{Error, Result};

/// Which features a probe sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    Population,
    /// A single residual-stream coordinate.
    Index(usize),
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unit::Population => f.write_str("population"),
            Unit::Index(i) => write!(f, "{i}"),
        }
    }
}

impl FromStr for Unit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "population" {
            return Ok(Unit::Population);
        }
        s.parse()
            .map(Unit::Index)
            .map_err(|_| Error::Config(format!("unit must be 'population' or an index, got {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub variable: String,
    pub layer: usize,
    pub token: usize,
    pub unit: Unit,
    pub scores: FoldScores,
    /// Same pipeline and folds with permuted labels.
    pub baseline: FoldScores,
}

/// Minimum trials per class before a probe is attempted.
pub const MIN_CLASS_TRIALS: usize = 5;

/// Five-fold logistic probe of `variable` from `acts`, with a shuffled
/// label control. Folds depend only on the labels, `key` and `opts.seed`.
pub fn probe_variable(
    acts: &ActivationMatrix,
    variable: Variable,
    unit: Unit,
    key: u64,
    opts: &FitOptions,
) -> Result<ProbeResult> {
    let y = acts.binary_labels(variable);
    let positives = y.iter().filter(|&&b| b).count();
    let fewest = positives.min(y.len() - positives);
    if fewest < MIN_CLASS_TRIALS.max(opts.folds) {
        return Err(Error::Domain(format!(
            "{variable}: smaller class has {fewest} trials, need {}",
            MIN_CLASS_TRIALS.max(opts.folds)
        )));
    }
    let x = match unit {
        Unit::Population => acts.features.clone(),
        Unit::Index(i) => {
            if i >= acts.features.ncols() {
                return Err(Error::Index(format!("unit {i} of {}", acts.features.ncols())));
            }
            DMatrix::from_column_slice(acts.trials(), 1, acts.features.column(i).as_slice())
        }
    };
    let classes: Vec<usize> = y.iter().map(|&b| usize::from(b)).collect();
    let folds = stratified_folds(&classes, opts.folds, key, opts.seed)?;
    let scores = logistic_cv(&x, &y, &folds, opts);
    let shuffled = permuted(&y, key, opts.seed);
    let baseline = logistic_cv(&x, &shuffled, &folds, opts);
    Ok(ProbeResult {
        variable: variable.name().to_string(),
        layer: acts.layer,
        token: acts.token,
        unit,
        scores,
        baseline,
    })
}

/// `variable,layer,token,unit,fold1..foldK,mean,std,baseline_mean` rows.
pub fn probes_csv(results: &[ProbeResult]) -> String {
    let k = results.first().map_or(5, |r| r.scores.folds.len());
    let mut s = String::from("variable,layer,token,unit,");
    for f in 1..=k {
        let _ = write!(s, "fold{f},");
    }
    s.push_str("mean,std,baseline_mean\n");
    for r in results {
        let _ = write!(s, "{},{},{},{},", r.variable, r.layer, r.token, r.unit);
        for a in &r.scores.folds {
            let _ = write!(s, "{a:.4},");
        }
        let _ = writeln!(s, "{:.4},{:.4},{:.4}", r.scores.mean, r.scores.std, r.baseline.mean);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::activations::TrialLabels;
    use crate::model::Response;
    use crate::task::{Choice, Coherence, Context};

    fn labels(n: usize) -> Vec<TrialLabels> {
        (0..n)
            .map(|i| TrialLabels {
                context: if i % 2 == 0 { Context::Motion } else { Context::Color },
                coh_m: Coherence::from_hundredths(if i % 3 == 0 { 10 } else { -10 }).unwrap(),
                coh_c: Coherence::from_hundredths(20).unwrap(),
                choice: if i % 4 < 2 { Choice::Left } else { Choice::Right },
                response: Response::Left,
            })
            .collect()
    }

    #[test]
    fn duplicated_label_column_is_perfect() {
        let l = labels(200);
        let x = DMatrix::from_fn(200, 4, |i, j| {
            if j == 2 {
                (i % 2) as f64
            } else {
                ((i * 7 + j) % 5) as f64
            }
        });
        let acts = ActivationMatrix::new(0, 3, x, l).unwrap();
        let r = probe_variable(&acts, Variable::Context, Unit::Population, 1, &FitOptions::default()).unwrap();
        assert_eq!(r.scores.mean, 1.0);
        assert_eq!(r.scores.folds.len(), 5);
        let single = probe_variable(&acts, Variable::Context, Unit::Index(2), 1, &FitOptions::default()).unwrap();
        assert_eq!(single.scores.mean, 1.0);
        assert!(r.baseline.mean < 0.75);
        let again = probe_variable(&acts, Variable::Context, Unit::Population, 1, &FitOptions::default()).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn degenerate_labels_are_rejected() {
        let l = labels(40);
        let acts = ActivationMatrix::new(0, 0, DMatrix::zeros(40, 2), l).unwrap();
        assert!(matches!(
            probe_variable(
                &acts,
                Variable::CohColorSign,
                Unit::Population,
                0,
                &FitOptions::default()
            ),
            Err(Error::Domain(_))
        ));
        assert!(probe_variable(&acts, Variable::Context, Unit::Index(9), 0, &FitOptions::default()).is_err());
    }

    #[test]
    fn csv_shape() {
        let l = labels(50);
        let acts = ActivationMatrix::new(1, 2, DMatrix::from_fn(50, 2, |i, _| i as f64), l).unwrap();
        let r = probe_variable(&acts, Variable::Choice, Unit::Population, 0, &FitOptions::default()).unwrap();
        let csv = probes_csv(&[r]);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "variable,layer,token,unit,fold1,fold2,fold3,fold4,fold5,mean,std,baseline_mean"
        );
        assert!(lines.next().unwrap().starts_with("choice,1,2,population,"));
        assert_eq!("population".parse::<Unit>().unwrap(), Unit::Population);
        assert_eq!("7".parse::<Unit>().unwrap(), Unit::Index(7));
    }
}
