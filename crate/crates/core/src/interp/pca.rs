// SPDX-License-Identifier: MIT OR Apache-2.0

//! Principal components of hidden-state trajectories.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::activations::ActivationMatrix;
use crate::error::{Error, Result};
use crate::task::{Choice, Context};

/// Covariance eigendecomposition of row samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// Eigenvalues in descending order.
    pub variances: DVector<f64>,
    /// Column `k` is the `k`-th unit-length component; its largest-magnitude
    /// entry is positive.
    pub components: DMatrix<f64>,
}

impl Pca {
    /// Fits on the rows of `x`. Fails when there are fewer than two rows or
    /// every column is constant.
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::Domain(format!("PCA needs at least 2 samples, got {n}")));
        }
        let mean = DVector::from_fn(x.ncols(), |j, _| x.column(j).mean());
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
        if cov.trace() <= 0.0 {
            return Err(Error::Domain("zero-variance input".into()));
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let d = x.ncols();
        let mut components = DMatrix::zeros(d, d);
        for (k, &src) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(src).into_owned();
            let lead = v
                .iter()
                .copied()
                .fold(0.0f64, |m, e| if e.abs() > m.abs() { e } else { m });
            if lead < 0.0 {
                v.neg_mut();
            }
            components.set_column(k, &v);
        }
        let variances = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i].max(0.0)));
        Ok(Pca {
            mean,
            variances,
            components,
        })
    }

    /// Coordinates of each row of `x` on the first `k` components.
    pub fn transform(&self, x: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        centered * self.components.columns(0, k)
    }

    /// Inverse of [`Pca::transform`] using as many components as `z` has
    /// columns.
    pub fn inverse_transform(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = z * self.components.columns(0, z.ncols()).transpose();
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRow {
    pub pc1: f64,
    pub pc2: f64,
    pub token_pos: usize,
    pub context: Context,
    pub coh_m: f64,
    pub coh_c: f64,
    pub choice: Choice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub rows: Vec<ProjectionRow>,
    pub pca: Pca,
}

impl Projection {
    /// Rows ordered by trial, then token.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("pc1,pc2,token_pos,context,coh_m,coh_c,choice\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:.6},{:.6},{},{},{:.2},{:.2},{}",
                r.pc1,
                r.pc2,
                r.token_pos,
                r.context.as_str(),
                r.coh_m,
                r.coh_c,
                r.choice.as_str()
            );
        }
        s
    }
}

/// Two-component PCA over every (trial, token) hidden state of one layer.
pub fn project_hidden_states(per_token: &[ActivationMatrix]) -> Result<Projection> {
    let Some(first) = per_token.first() else {
        return Err(Error::Contract("no activations to project".into()));
    };
    let (trials, d) = first.features.shape();
    if per_token.iter().any(|m| m.features.shape() != (trials, d)) {
        return Err(Error::dim("project", "activation matrices differ in shape"));
    }
    if d < 2 {
        return Err(Error::dim("project", "need at least two features"));
    }
    let t = per_token.len();
    let x = DMatrix::from_fn(trials * t, d, |r, j| per_token[r % t].features[(r / t, j)]);
    let pca = Pca::fit(&x)?;
    let z = pca.transform(&x, 2);
    let rows = (0..trials * t)
        .map(|r| {
            let m = &per_token[r % t];
            let l = &m.labels[r / t];
            ProjectionRow {
                pc1: z[(r, 0)],
                pc2: z[(r, 1)],
                token_pos: m.token,
                context: l.context,
                coh_m: l.coh_m.value(),
                coh_c: l.coh_c.value(),
                choice: l.choice,
            }
        })
        .collect();
    Ok(Projection { rows, pca })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_has_no_second_component() {
        let x = DMatrix::from_fn(30, 3, |i, j| (i as f64 - 7.0) * [1.0, -2.0, 0.5][j] + 4.0);
        let p = Pca::fit(&x).unwrap();
        let z = p.transform(&x, 2);
        assert!(z.column(1).amax() < 1e-9);
        assert!(p.variances[1] < 1e-9);
    }

    #[test]
    fn sign_convention() {
        let x = DMatrix::from_fn(10, 2, |i, j| if j == 0 { -(i as f64) } else { 0.1 * i as f64 });
        let p = Pca::fit(&x).unwrap();
        let c = p.components.column(0);
        assert!(c[0] > 0.0 && c[0].abs() > c[1].abs());
    }

    #[test]
    fn constant_input_is_an_error() {
        assert!(matches!(
            Pca::fit(&DMatrix::from_element(5, 3, 2.0)),
            Err(Error::Domain(_))
        ));
        assert!(Pca::fit(&DMatrix::zeros(1, 3)).is_err());
    }
}
