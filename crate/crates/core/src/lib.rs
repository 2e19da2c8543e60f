//! Graph self-training with distribution recovery.
//!
//! A two-layer graph convolutional classifier is trained by iterative
//! pseudo-labeling. Pseudo-labeled nodes are re-weighted by Monte-Carlo
//! estimated information gain (dropout or dropedge sampling on the final
//! layer) to counteract the distribution shift that confidence-based
//! selection induces, and pseudo-label noise is absorbed by a learned
//! class-transition matrix applied to the training-time output.

pub mod bundle;
pub mod correction;
pub mod data;
pub mod dense;
pub mod error;
pub mod gain;
pub mod gcn;
pub mod population;
pub mod rng;
pub mod selftrain;
pub mod sparse;
pub mod stats;
pub mod synthetic;

pub use bundle::{GraphBundle, SplitMasks};
pub use correction::{corrected_prob_matrix, corrected_probs, fit_transition, FitOptions, TransitionMatrix};
pub use dense::DenseMatrix;
pub use error::{Error, Result};
pub use gain::{
    information_gain, mc_dropedge_samples, mc_dropout_samples, normalize_gains,
    predictive_distribution, GainReport, McConfig, McMode,
};
pub use gcn::{
    backward, forward, predict, train_gcn, weighted_ce_loss, GcnParams, NodeWeights, Prediction,
    TrainConfig, TrainedModel,
};
pub use population::{gamma_weight, FinitePopulation};
pub use selftrain::{
    run_dr_gst, run_stage, select_pseudo, PseudoLabelSet, SelfTrainOutcome, StageConfig,
    StageReport,
};
pub use sparse::{normalize_adjacency, spmm, SparseMatrixCsr};
