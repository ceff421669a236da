// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cross-validated linear classifiers trained by full-batch (sub)gradient
//! descent.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::trial_rng;

const FOLD_SALT: u64 = 0x464f_4c44_5350_4c54;
const SHUFFLE_SALT: u64 = 0x5045_524d_5554_4531;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub l2: f64,
    pub lr: f64,
    pub max_iter: usize,
    /// Stop once the objective changes by less than this between steps.
    pub tol: f64,
    pub folds: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            l2: 1e-3,
            lr: 0.1,
            max_iter: 1000,
            tol: 1e-6,
            folds: 5,
            seed: 0,
        }
    }
}

/// Per-fold held-out accuracies with their mean and sample standard
/// deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScores {
    pub folds: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl FoldScores {
    pub fn new(folds: Vec<f64>) -> Self {
        let n = folds.len() as f64;
        let mean = folds.iter().sum::<f64>() / n;
        let var = if folds.len() > 1 {
            folds.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        FoldScores {
            folds,
            mean,
            std: var.sqrt(),
        }
    }
}

/// Fold index per trial. Each class is shuffled with a generator keyed by
/// `(key, seed)` and dealt round-robin, so every fold sees every class.
pub fn stratified_folds(classes: &[usize], folds: usize, key: u64, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    let n_classes = classes.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![0; classes.len()];
    let mut rng = trial_rng(key ^ FOLD_SALT, seed);
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < folds {
            return Err(Error::Domain(format!(
                "class {c} has {} trials, fewer than {folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (j, &i) in members.iter().enumerate() {
            out[i] = j % folds;
        }
    }
    Ok(out)
}

/// Labels under a fixed permutation keyed by `(key, seed)`.
pub fn permuted<T: Clone>(labels: &[T], key: u64, seed: u64) -> Vec<T> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut trial_rng(key ^ SHUFFLE_SALT, seed));
    order.into_iter().map(|i| labels[i].clone()).collect()
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// Column means and standard deviations; constant columns get scale 1.
fn standardizer(x: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = x.nrows() as f64;
    let mean = DVector::from_fn(x.ncols(), |j, _| x.column(j).sum() / n);
    let scale = DVector::from_fn(x.ncols(), |j, _| {
        let m = mean[j];
        let s = (x.column(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        if s > 0.0 {
            s
        } else {
            1.0
        }
    });
    (mean, scale)
}

fn apply_standardizer(x: &mut DMatrix<f64>, mean: &DVector<f64>, scale: &DVector<f64>) {
    for j in 0..x.ncols() {
        let (m, s) = (mean[j], scale[j]);
        x.column_mut(j).apply(|v| *v = (*v - m) / s);
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// L2-regularized logistic regression on already standardized features.
/// Returns weights and intercept.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[bool], opts: &FitOptions) -> (DVector<f64>, f64) {
    let n = x.nrows() as f64;
    let yv = DVector::from_iterator(y.len(), y.iter().map(|&b| if b { 1.0 } else { 0.0 }));
    let mut w = DVector::zeros(x.ncols());
    let mut b = 0.0;
    let mut prev = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let z = x * &w;
        let mut loss = 0.0;
        let mut resid = DVector::zeros(y.len());
        for i in 0..y.len() {
            let zi = z[i] + b;
            // log(1 + e^z) - y z, computed stably.
            loss += zi.max(0.0) + (-zi.abs()).exp().ln_1p() - yv[i] * zi;
            resid[i] = sigmoid(zi) - yv[i];
        }
        let objective = loss / n + 0.5 * opts.l2 * w.norm_squared();
        if (prev - objective).abs() < opts.tol {
            break;
        }
        prev = objective;
        let gw = x.tr_mul(&resid) / n + &w * opts.l2;
        let gb = resid.sum() / n;
        w -= gw * opts.lr;
        b -= gb * opts.lr;
    }
    (w, b)
}

/// One-vs-rest linear SVM (hinge loss, L2) trained by subgradient descent.
/// Returns a `features × classes` weight matrix and per-class intercepts.
pub fn fit_ovr_svm(x: &DMatrix<f64>, y: &[usize], classes: usize, opts: &FitOptions) -> (DMatrix<f64>, DVector<f64>) {
    let n = x.nrows() as f64;
    let sign = DMatrix::from_fn(y.len(), classes, |i, c| if y[i] == c { 1.0 } else { -1.0 });
    let mut w = DMatrix::zeros(x.ncols(), classes);
    let mut b = DVector::zeros(classes);
    let mut prev = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let mut scores = x * &w;
        for mut row in scores.row_iter_mut() {
            row += b.transpose();
        }
        let mut loss = 0.0;
        // Subgradient of the mean hinge with respect to the scores.
        let mut g = DMatrix::zeros(y.len(), classes);
        for i in 0..y.len() {
            for c in 0..classes {
                let margin = sign[(i, c)] * scores[(i, c)];
                if margin < 1.0 {
                    loss += 1.0 - margin;
                    g[(i, c)] = -sign[(i, c)] / n;
                }
            }
        }
        let objective = loss / n + 0.5 * opts.l2 * w.norm_squared();
        if (prev - objective).abs() < opts.tol {
            break;
        }
        prev = objective;
        let gw = x.tr_mul(&g) + &w * opts.l2;
        let gb = DVector::from_fn(classes, |c, _| g.column(c).sum());
        w -= gw * opts.lr;
        b -= gb * opts.lr;
    }
    (w, b)
}

/// Held-out accuracy of `fit` + `predict` in each fold, standardizing
/// features on the training part only.
fn cross_validate<L: Copy + PartialEq + Sync>(
    x: &DMatrix<f64>,
    y: &[L],
    fold_of: &[usize],
    folds: usize,
    fit_predict: impl Fn(&DMatrix<f64>, &[L], &DMatrix<f64>) -> Vec<L> + Sync,
) -> FoldScores {
    use rayon::prelude::*;
    let scores = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..y.len()).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..y.len()).filter(|&i| fold_of[i] == f).collect();
            let mut xtr = select_rows(x, &train);
            let mut xte = select_rows(x, &test);
            let (mean, scale) = standardizer(&xtr);
            apply_standardizer(&mut xtr, &mean, &scale);
            apply_standardizer(&mut xte, &mean, &scale);
            let ytr: Vec<L> = train.iter().map(|&i| y[i]).collect();
            let pred = fit_predict(&xtr, &ytr, &xte);
            let hits = test.iter().zip(&pred).filter(|(&i, p)| y[i] == **p).count();
            hits as f64 / test.len() as f64
        })
        .collect();
    FoldScores::new(scores)
}

/// Cross-validated logistic-regression accuracy on given folds.
pub fn logistic_cv(x: &DMatrix<f64>, y: &[bool], fold_of: &[usize], opts: &FitOptions) -> FoldScores {
    cross_validate(x, y, fold_of, opts.folds, |xtr, ytr, xte| {
        let (w, b) = fit_logistic(xtr, ytr, opts);
        (xte * &w).iter().map(|z| z + b >= 0.0).collect()
    })
}

/// Cross-validated one-vs-rest SVM accuracy on given folds; `y` holds
/// class indices below `classes`.
pub fn svm_cv(x: &DMatrix<f64>, y: &[usize], classes: usize, fold_of: &[usize], opts: &FitOptions) -> FoldScores {
    cross_validate(x, y, fold_of, opts.folds, |xtr, ytr, xte| {
        let (w, b) = fit_ovr_svm(xtr, ytr, classes, opts);
        let scores = xte * &w;
        (0..xte.nrows())
            .map(|i| {
                let mut best = 0;
                for c in 1..classes {
                    if scores[(i, c)] + b[c] > scores[(i, best)] + b[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    })
}
