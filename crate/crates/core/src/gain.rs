//! Monte-Carlo dropout / dropedge posterior sampling, the averaged
//! predictive distribution, information gain, and gain normalization.
//!
//! Sampling perturbs only the final layer: the hidden representation is
//! computed once deterministically, then each sample masks either the
//! hidden features (dropout) or the propagation edges (dropedge) before the
//! last propagation and softmax.

use serde::{Deserialize, Serialize};

use crate::bundle::GraphBundle;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::gcn::{hidden_representation, GcnParams};
use crate::rng;
use crate::sparse::{normalize_adjacency, spmm, SparseMatrixCsr};

/// Which structure the Monte-Carlo masks perturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McMode {
    Dropout,
    Dropedge,
}

/// Monte-Carlo sampling configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub num_samples: usize,
    pub drop_rate: f64,
    pub mode: McMode,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            num_samples: 100,
            drop_rate: 0.3,
            mode: McMode::Dropout,
            seed: 0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::config("num_samples must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(Error::config("drop_rate must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Monte-Carlo dropout: mask the hidden features before the final layer,
/// once per sample, with inverted-dropout scaling.
pub fn mc_dropout_samples(
    params: &GcnParams,
    bundle: &GraphBundle,
    norm_adj: &SparseMatrixCsr,
    cfg: &McConfig,
) -> Result<Vec<DenseMatrix>> {
    cfg.validate()?;
    let hidden = hidden_representation(params, bundle, norm_adj)?;
    let mut samples = Vec::with_capacity(cfg.num_samples);
    for t in 0..cfg.num_samples {
        let mut stream = rng::sample_stream(cfg.seed, t as u64);
        let mut mask = DenseMatrix::zeros(hidden.rows(), hidden.cols());
        rng::fill_dropout(mask.data_mut(), cfg.drop_rate, &mut stream);
        let masked = hidden.hadamard(&mask)?;
        let logits = spmm(norm_adj, &masked.matmul(&params.w2)?)?;
        samples.push(logits.row_softmax());
    }
    Ok(samples)
}

/// Per-undirected-edge keep decisions for one dropedge sample.
pub fn sample_edge_mask(
    num_edges: usize,
    drop_rate: f64,
    stream: &mut rand_chacha::ChaCha8Rng,
) -> Vec<bool> {
    use rand::Rng;
    (0..num_edges).map(|_| stream.gen::<f64>() >= drop_rate).collect()
}

/// Apply an undirected-edge mask: each kept pair stays in both directions,
/// so the result is symmetric. `keep` is aligned with
/// `adjacency.upper_triangle_edges()`.
pub fn apply_edge_mask(adjacency: &SparseMatrixCsr, keep: &[bool]) -> Result<SparseMatrixCsr> {
    let edges = adjacency.upper_triangle_edges();
    if edges.len() != keep.len() {
        return Err(Error::structural("edge mask length mismatch"));
    }
    let kept: Vec<(usize, usize)> = edges
        .into_iter()
        .zip(keep)
        .filter_map(|(e, &k)| k.then_some(e))
        .collect();
    SparseMatrixCsr::from_undirected_edges(adjacency.num_rows(), &kept)
}

/// Monte-Carlo dropedge: the hidden representation uses the full operator;
/// each sample removes stored undirected edges (both directions together)
/// with probability `drop_rate`, renormalizes (self-loops are re-added by
/// the normalizer and are never dropped), and propagates the final layer
/// through the sampled operator.
pub fn mc_dropedge_samples(
    params: &GcnParams,
    bundle: &GraphBundle,
    norm_adj: &SparseMatrixCsr,
    cfg: &McConfig,
) -> Result<Vec<DenseMatrix>> {
    cfg.validate()?;
    let hidden = hidden_representation(params, bundle, norm_adj)?;
    let hidden_logits = hidden.matmul(&params.w2)?;
    let num_edges = bundle.adjacency.upper_triangle_edges().len();
    let mut samples = Vec::with_capacity(cfg.num_samples);
    for t in 0..cfg.num_samples {
        let mut stream = rng::sample_stream(cfg.seed, t as u64);
        let keep = sample_edge_mask(num_edges, cfg.drop_rate, &mut stream);
        let masked = apply_edge_mask(&bundle.adjacency, &keep)?;
        let sampled_adj = normalize_adjacency(&masked)?;
        let logits = spmm(&sampled_adj, &hidden_logits)?;
        samples.push(logits.row_softmax());
    }
    Ok(samples)
}

pub fn mc_samples(
    params: &GcnParams,
    bundle: &GraphBundle,
    norm_adj: &SparseMatrixCsr,
    cfg: &McConfig,
) -> Result<Vec<DenseMatrix>> {
    match cfg.mode {
        McMode::Dropout => mc_dropout_samples(params, bundle, norm_adj, cfg),
        McMode::Dropedge => mc_dropedge_samples(params, bundle, norm_adj, cfg),
    }
}

/// Elementwise mean of the samples, summed in sample order.
pub fn predictive_distribution(samples: &[DenseMatrix]) -> Result<DenseMatrix> {
    let first = samples
        .first()
        .ok_or_else(|| Error::config("predictive distribution needs at least one sample"))?;
    let mut acc = DenseMatrix::zeros(first.rows(), first.cols());
    for s in samples {
        if s.shape() != first.shape() {
            return Err(Error::structural("inconsistent sample shapes"));
        }
        for (a, &v) in acc.data_mut().iter_mut().zip(s.data()) {
            *a += v;
        }
    }
    Ok(acc.scale(1.0 / samples.len() as f64))
}

/// Shannon entropy with natural log and `0 log 0 := 0`.
pub fn entropy(row: &[f64]) -> f64 {
    row.iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum()
}

/// Per-node information gain: entropy of the predictive mean minus the mean
/// entropy of the samples. Tiny negatives from rounding (within -1e-12) are
/// clamped to zero.
pub fn information_gain(samples: &[DenseMatrix], predictive: &DenseMatrix) -> Vec<f64> {
    let num_nodes = predictive.rows();
    let inv_t = 1.0 / samples.len() as f64;
    (0..num_nodes)
        .map(|u| {
            let mean_entropy: f64 = samples.iter().map(|s| entropy(s.row(u))).sum::<f64>() * inv_t;
            let gain = entropy(predictive.row(u)) - mean_entropy;
            if gain < 0.0 && gain >= -1e-12 {
                0.0
            } else {
                gain
            }
        })
        .collect()
}

/// Gains divided by `beta * mean(gain)`, so the normalized values average
/// to `1/beta`. When the mean gain collapses (all samples identical) every
/// weight falls back to 1 and the degeneracy flag is raised.
pub fn normalize_gains(gains: &[f64], beta: f64) -> Result<(Vec<f64>, bool)> {
    if gains.is_empty() {
        return Err(Error::config("cannot normalize an empty gain set"));
    }
    if beta <= 0.0 || !beta.is_finite() {
        return Err(Error::config("beta must be positive"));
    }
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    if mean <= 1e-15 {
        return Ok((vec![1.0; gains.len()], true));
    }
    let denom = beta * mean;
    Ok((gains.iter().map(|g| (g / denom).max(0.0)).collect(), false))
}

/// Predictive distribution, raw gains for every node, and normalized
/// weights for a selected node subset.
#[derive(Debug, Clone)]
pub struct GainReport {
    pub predictive: DenseMatrix,
    pub gain: Vec<f64>,
    pub weighted_nodes: Vec<usize>,
    pub normalized_gain: Vec<f64>,
    pub beta: f64,
    pub degenerate: bool,
}

/// Run the configured Monte-Carlo estimator and normalize the gains of
/// `weighted_nodes` (typically the pseudo-labeled selection).
pub fn estimate_gain(
    params: &GcnParams,
    bundle: &GraphBundle,
    norm_adj: &SparseMatrixCsr,
    cfg: &McConfig,
    weighted_nodes: &[usize],
    beta: f64,
) -> Result<GainReport> {
    let samples = mc_samples(params, bundle, norm_adj, cfg)?;
    let predictive = predictive_distribution(&samples)?;
    let gain = information_gain(&samples, &predictive);
    let (normalized_gain, degenerate) = if weighted_nodes.is_empty() {
        (Vec::new(), false)
    } else {
        let subset: Vec<f64> = weighted_nodes.iter().map(|&u| gain[u]).collect();
        normalize_gains(&subset, beta)?
    };
    Ok(GainReport {
        predictive,
        gain,
        weighted_nodes: weighted_nodes.to_vec(),
        normalized_gain,
        beta,
        degenerate,
    })
}
