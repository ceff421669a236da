// SPDX-License-Identifier: MIT OR Apache-2.0

//! Analyses of trained checkpoints: head ablation, attention maps, probes,
//! head-output decoding and hidden-state projection. Nothing here mutates
//! a checkpoint.

mod ablation;
mod activations;
mod attention;
mod linear;
mod pca;
mod probe;
pub mod svg;
mod svm;

pub use ablation::{ablation_sweep, AblationGrid};
pub use activations::{collect_head_features, collect_hidden_states, ActivationMatrix, TrialLabels, Variable};
pub use attention::{avg_attention, column_mass};
pub use linear::{fit_logistic, fit_ovr_svm, logistic_cv, permuted, stratified_folds, svm_cv, FitOptions, FoldScores};
pub use pca::{project_hidden_states, Pca, Projection, ProjectionRow};
pub use probe::{probe_variable, probes_csv, ProbeResult, Unit, MIN_CLASS_TRIALS};
pub use svm::{svm_response_decoder, SvmCell, SvmGrid};
