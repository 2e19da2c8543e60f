//! Two-layer graph convolutional classifier with hand-written
//! backpropagation, Adam, inverted dropout and validation-accuracy early
//! stopping.
//!
//! Layer structure: `H1 = relu(N (X . M0) W1)`, `P = softmax(N (H1 . M1) W2)`
//! where `N` is the renormalized adjacency and `M0`, `M1` are optional
//! inverted-dropout masks on each layer input.

use serde::{Deserialize, Serialize};

use crate::bundle::{GraphBundle, SplitMasks};
use crate::correction::TransitionMatrix;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::rng;
use crate::sparse::{spmm, SparseMatrixCsr};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Probabilities below this are clamped before taking logs.
pub const PROB_EPS: f64 = 1e-12;

/// Model weights plus Adam moment buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    pub w1: DenseMatrix,
    pub w2: DenseMatrix,
    pub adam_m1: DenseMatrix,
    pub adam_v1: DenseMatrix,
    pub adam_m2: DenseMatrix,
    pub adam_v2: DenseMatrix,
    pub step: usize,
}

impl GcnParams {
    /// Glorot-uniform weights, zero moments, from the given seed.
    pub fn init(num_features: usize, hidden_dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let w1 = rng::glorot_uniform(num_features, hidden_dim, &mut r);
        let w2 = rng::glorot_uniform(hidden_dim, num_classes, &mut r);
        GcnParams {
            adam_m1: DenseMatrix::zeros(num_features, hidden_dim),
            adam_v1: DenseMatrix::zeros(num_features, hidden_dim),
            adam_m2: DenseMatrix::zeros(hidden_dim, num_classes),
            adam_v2: DenseMatrix::zeros(hidden_dim, num_classes),
            w1,
            w2,
            step: 0,
        }
    }

    pub fn zeros(num_features: usize, hidden_dim: usize, num_classes: usize) -> Self {
        GcnParams {
            w1: DenseMatrix::zeros(num_features, hidden_dim),
            w2: DenseMatrix::zeros(hidden_dim, num_classes),
            adam_m1: DenseMatrix::zeros(num_features, hidden_dim),
            adam_v1: DenseMatrix::zeros(num_features, hidden_dim),
            adam_m2: DenseMatrix::zeros(hidden_dim, num_classes),
            adam_v2: DenseMatrix::zeros(hidden_dim, num_classes),
            step: 0,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.w2.cols()
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub train_dropout: f64,
    pub hidden_dim: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            weight_decay: 5e-4,
            max_epochs: 300,
            patience: 200,
            train_dropout: 0.5,
            hidden_dim: 16,
            lambda: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.train_dropout) {
            return Err(Error::config("train_dropout must be in [0, 1)"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::config("patience must not exceed max_epochs"));
        }
        if self.lambda != 1.0 {
            return Err(Error::config("lambda is fixed at 1.0"));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.hidden_dim == 0 || self.max_epochs == 0 {
            return Err(Error::config("hidden_dim and max_epochs must be positive"));
        }
        Ok(())
    }
}

/// Per-node loss coefficients: 1.0 for ground-truth nodes, the normalized
/// information gain for pseudo-labeled nodes, ignored elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeWeights {
    pub values: Vec<f64>,
}

impl NodeWeights {
    pub fn uniform(num_nodes: usize) -> Self {
        NodeWeights {
            values: vec![1.0; num_nodes],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config("node weights must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Features in CSR form; zero entries of the dense feature matrix carry no
/// information through the linear layers, so they are skipped.
#[derive(Debug, Clone)]
pub struct SparseFeatures {
    num_rows: usize,
    num_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseFeatures {
    pub fn from_dense(x: &DenseMatrix) -> Self {
        let mut row_offsets = Vec::with_capacity(x.rows() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for i in 0..x.rows() {
            for (j, &v) in x.row(i).iter().enumerate() {
                if v != 0.0 {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        SparseFeatures {
            num_rows: x.rows(),
            num_cols: x.cols(),
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(X . mask) W` where `mask` holds one factor per stored entry.
    fn matmul(&self, w: &DenseMatrix, mask: Option<&[f64]>) -> DenseMatrix {
        let cols = w.cols();
        let mut out = DenseMatrix::zeros(self.num_rows, cols);
        for i in 0..self.num_rows {
            let span = self.row_offsets[i]..self.row_offsets[i + 1];
            let orow = out.row_mut(i);
            for k in span {
                let v = match mask {
                    Some(m) => self.values[k] * m[k],
                    None => self.values[k],
                };
                if v == 0.0 {
                    continue;
                }
                let wrow = w.row(self.col_indices[k]);
                for (o, &ww) in orow.iter_mut().zip(wrow) {
                    *o += v * ww;
                }
            }
        }
        out
    }

    /// `(X . mask)^T G`, accumulated in row order for reproducibility.
    fn transpose_matmul(&self, g: &DenseMatrix, mask: Option<&[f64]>) -> DenseMatrix {
        let cols = g.cols();
        let mut out = DenseMatrix::zeros(self.num_cols, cols);
        for i in 0..self.num_rows {
            let span = self.row_offsets[i]..self.row_offsets[i + 1];
            let grow = g.row(i);
            for k in span {
                let v = match mask {
                    Some(m) => self.values[k] * m[k],
                    None => self.values[k],
                };
                if v == 0.0 {
                    continue;
                }
                let orow = out.row_mut(self.col_indices[k]);
                for (o, &gg) in orow.iter_mut().zip(grow) {
                    *o += v * gg;
                }
            }
        }
        out
    }
}

/// Inverted-dropout masks for one forward/backward pair: one factor per
/// stored feature entry and a dense mask on the hidden layer input.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    pub input: Vec<f64>,
    pub hidden: DenseMatrix,
}

/// Draw masks for the given rate; rate 0 yields all-ones masks.
pub fn sample_dropout_masks(
    features: &SparseFeatures,
    num_nodes: usize,
    hidden_dim: usize,
    rate: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> DropoutMasks {
    let mut input = vec![0.0; features.nnz()];
    rng::fill_dropout(&mut input, rate, rng);
    let mut hidden = DenseMatrix::zeros(num_nodes, hidden_dim);
    rng::fill_dropout(hidden.data_mut(), rate, rng);
    DropoutMasks { input, hidden }
}

/// Intermediates retained for backpropagation.
pub struct ForwardPass {
    pub pre_activation: DenseMatrix,
    pub hidden_masked: DenseMatrix,
    pub probs: DenseMatrix,
}

fn check_finite(m: &DenseMatrix, layer: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(layer, "non-finite value"))
    }
}

pub fn forward_pass(
    features: &SparseFeatures,
    norm_adj: &SparseMatrixCsr,
    w1: &DenseMatrix,
    w2: &DenseMatrix,
    masks: Option<&DropoutMasks>,
) -> Result<ForwardPass> {
    if let Some(m) = masks {
        if m.input.len() != features.nnz() || m.hidden.shape() != (features.num_rows, w1.cols()) {
            return Err(Error::structural("dropout masks do not match model shapes"));
        }
    }
    let xw = features.matmul(w1, masks.map(|m| m.input.as_slice()));
    let pre_activation = spmm(norm_adj, &xw)?;
    check_finite(&pre_activation, "hidden layer")?;
    let hidden = pre_activation.relu();
    let hidden_masked = match masks {
        Some(m) => hidden.hadamard(&m.hidden)?,
        None => hidden,
    };
    let logits = spmm(norm_adj, &hidden_masked.matmul(w2)?)?;
    check_finite(&logits, "output layer")?;
    Ok(ForwardPass {
        pre_activation,
        hidden_masked,
        probs: logits.row_softmax(),
    })
}

/// Full-graph class probabilities; rows sum to 1.
pub fn forward(
    params: &GcnParams,
    bundle: &GraphBundle,
    norm_adj: &SparseMatrixCsr,
    masks: Option<&DropoutMasks>,
) -> Result<DenseMatrix> {
    let features = SparseFeatures::from_dense(&bundle.features);
    Ok(forward_pass(&features, norm_adj, &params.w1, &params.w2, masks)?.probs)
}

/// Hidden representation `relu(N X W1)` with no dropout.
pub fn hidden_representation(
    params: &GcnParams,
    bundle: &GraphBundle,
    norm_adj: &SparseMatrixCsr,
) -> Result<DenseMatrix> {
    let features = SparseFeatures::from_dense(&bundle.features);
    let xw = features.matmul(&params.w1, None);
    let pre = spmm(norm_adj, &xw)?;
    check_finite(&pre, "hidden layer")?;
    Ok(pre.relu())
}

/// Deterministic prediction: probabilities, argmax labels (ties to the
/// lowest class index), and per-node confidence = max probability.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub probabilities: DenseMatrix,
    pub labels: Vec<usize>,
    pub confidence: Vec<f64>,
}

pub fn predict(
    params: &GcnParams,
    bundle: &GraphBundle,
    norm_adj: &SparseMatrixCsr,
) -> Result<Prediction> {
    let probabilities = forward(params, bundle, norm_adj, None)?;
    Ok(prediction_from_probs(probabilities))
}

pub fn prediction_from_probs(probabilities: DenseMatrix) -> Prediction {
    let arg = probabilities.row_argmax();
    Prediction {
        labels: arg.iter().map(|&(l, _)| l).collect(),
        confidence: arg.iter().map(|&(_, c)| c).collect(),
        probabilities,
    }
}

/// Mean over active nodes of `weight * (-log p[label])`. Empty active sets
/// yield 0. Returns the loss and whether any picked probability needed
/// clamping at `PROB_EPS`.
pub fn weighted_ce_loss_checked(
    probs: &DenseMatrix,
    labels: &[usize],
    active: &[bool],
    weights: &NodeWeights,
) -> (f64, bool) {
    let mut total = 0.0;
    let mut count = 0usize;
    let mut clamped = false;
    for i in 0..probs.rows() {
        if !active[i] {
            continue;
        }
        count += 1;
        let mut p = probs.get(i, labels[i]);
        if p <= 0.0 || p < PROB_EPS {
            p = PROB_EPS;
            clamped = true;
        }
        total += weights.values[i] * -p.ln();
    }
    if count == 0 {
        (0.0, clamped)
    } else {
        (total / count as f64, clamped)
    }
}

pub fn weighted_ce_loss(
    probs: &DenseMatrix,
    labels: &[usize],
    active: &[bool],
    weights: &NodeWeights,
) -> f64 {
    weighted_ce_loss_checked(probs, labels, active, weights).0
}

/// Gradient of the weighted CE loss with respect to the logits. With a
/// transition matrix the loss reads the corrected probabilities `p T` while
/// gradients flow through the fixed `T` into the student.
pub fn ce_logit_gradient(
    probs: &DenseMatrix,
    labels: &[usize],
    active: &[bool],
    weights: &NodeWeights,
    correction: Option<&TransitionMatrix>,
) -> DenseMatrix {
    let n_active = active.iter().filter(|&&a| a).count();
    let mut grad = DenseMatrix::zeros(probs.rows(), probs.cols());
    if n_active == 0 {
        return grad;
    }
    let inv = 1.0 / n_active as f64;
    for i in 0..probs.rows() {
        if !active[i] {
            continue;
        }
        let w = weights.values[i] * inv;
        let y = labels[i];
        let prow = probs.row(i);
        let grow = grad.row_mut(i);
        match correction {
            None => {
                for (j, (&p, g)) in prow.iter().zip(grow.iter_mut()).enumerate() {
                    *g = w * (p - if j == y { 1.0 } else { 0.0 });
                }
            }
            Some(t) => {
                let mut corrected_y = 0.0;
                for (k, &p) in prow.iter().enumerate() {
                    corrected_y += p * t.get(k, y);
                }
                let corrected_y = corrected_y.max(PROB_EPS);
                for (j, (&p, g)) in prow.iter().zip(grow.iter_mut()).enumerate() {
                    *g = w * p * (1.0 - t.get(j, y) / corrected_y);
                }
            }
        }
    }
    grad
}

/// Gradients matching `w1` / `w2`.
pub struct Gradients {
    pub w1: DenseMatrix,
    pub w2: DenseMatrix,
}

fn backward_pass(
    features: &SparseFeatures,
    norm_adj: &SparseMatrixCsr,
    pass: &ForwardPass,
    params: &GcnParams,
    masks: Option<&DropoutMasks>,
    labels: &[usize],
    active: &[bool],
    weights: &NodeWeights,
    correction: Option<&TransitionMatrix>,
    weight_decay: f64,
) -> Result<Gradients> {
    let logit_grad = ce_logit_gradient(&pass.probs, labels, active, weights, correction);
    // N is symmetric, so propagating the logit gradient back through the
    // final spmm is another spmm with N.
    let g2 = spmm(norm_adj, &logit_grad)?;
    let mut dw2 = pass.hidden_masked.transpose().matmul(&g2)?;

    let mut dhidden = g2.matmul(&params.w2.transpose())?;
    if let Some(m) = masks {
        dhidden = dhidden.hadamard(&m.hidden)?;
    }
    // relu' gate on the layer-1 pre-activation.
    for (d, &a) in dhidden
        .data_mut()
        .iter_mut()
        .zip(pass.pre_activation.data())
    {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
    let g1 = spmm(norm_adj, &dhidden)?;
    let mut dw1 = features.transpose_matmul(&g1, masks.map(|m| m.input.as_slice()));

    if weight_decay != 0.0 {
        for (d, &w) in dw1.data_mut().iter_mut().zip(params.w1.data()) {
            *d += weight_decay * w;
        }
        for (d, &w) in dw2.data_mut().iter_mut().zip(params.w2.data()) {
            *d += weight_decay * w;
        }
    }
    Ok(Gradients { w1: dw1, w2: dw2 })
}

/// Recompute the forward pass under the supplied masks and return analytic
/// gradients of the weighted CE loss plus L2 weight decay.
#[allow(clippy::too_many_arguments)]
pub fn backward(
    params: &GcnParams,
    bundle: &GraphBundle,
    norm_adj: &SparseMatrixCsr,
    labels: &[usize],
    active: &[bool],
    weights: &NodeWeights,
    masks: Option<&DropoutMasks>,
    correction: Option<&TransitionMatrix>,
    weight_decay: f64,
) -> Result<Gradients> {
    let features = SparseFeatures::from_dense(&bundle.features);
    let pass = forward_pass(&features, norm_adj, &params.w1, &params.w2, masks)?;
    backward_pass(
        &features,
        norm_adj,
        &pass,
        params,
        masks,
        labels,
        active,
        weights,
        correction,
        weight_decay,
    )
}

fn adam_update(
    w: &mut DenseMatrix,
    m: &mut DenseMatrix,
    v: &mut DenseMatrix,
    grad: &DenseMatrix,
    lr: f64,
    step: usize,
) {
    let b1t = 1.0 - ADAM_BETA1.powi(step as i32);
    let b2t = 1.0 - ADAM_BETA2.powi(step as i32);
    for ((w, m), (v, &g)) in w
        .data_mut()
        .iter_mut()
        .zip(m.data_mut())
        .zip(v.data_mut().iter_mut().zip(grad.data()))
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let mhat = *m / b1t;
        let vhat = *v / b2t;
        *w -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
}

/// A trained model together with its early-stopping trace.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: GcnParams,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_history: Vec<f64>,
}

/// Train with Adam and early stopping on validation accuracy; the snapshot
/// with the best validation accuracy is returned (ties keep the earlier
/// epoch). When a correction matrix is supplied the training loss reads
/// `p T` while the returned model stays uncorrected. Without validation
/// nodes early stopping is disabled and the final parameters are returned.
#[allow(clippy::too_many_arguments)]
pub fn train_gcn(
    bundle: &GraphBundle,
    norm_adj: &SparseMatrixCsr,
    labels_for_training: &[usize],
    active: &[bool],
    weights: &NodeWeights,
    split: &SplitMasks,
    config: &TrainConfig,
    correction: Option<&TransitionMatrix>,
) -> Result<TrainedModel> {
    config.validate()?;
    weights.validate()?;
    if !active.iter().any(|&a| a) {
        return Err(Error::config("active set is empty"));
    }
    if active.len() != bundle.num_nodes() || labels_for_training.len() != bundle.num_nodes() {
        return Err(Error::structural("active/labels length mismatch"));
    }
    for i in 0..bundle.num_nodes() {
        if split.train[i] && !active[i] {
            return Err(Error::config(format!(
                "train node {i} missing from the active set"
            )));
        }
    }
    if labels_for_training.iter().any(|&l| l >= bundle.num_classes) {
        return Err(Error::structural("training label out of range"));
    }

    let features = SparseFeatures::from_dense(&bundle.features);
    let mut params = GcnParams::init(
        bundle.features.cols(),
        config.hidden_dim,
        bundle.num_classes,
        config.seed,
    );
    let mut rng = rng::seeded(config.seed.wrapping_add(1));

    let has_val = split.val.iter().any(|&v| v);
    let mut best_params = params.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut val_history = Vec::with_capacity(config.max_epochs);
    let mut epochs_run = 0usize;

    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        let masks = sample_dropout_masks(
            &features,
            bundle.num_nodes(),
            config.hidden_dim,
            config.train_dropout,
            &mut rng,
        );
        let pass = forward_pass(&features, norm_adj, &params.w1, &params.w2, Some(&masks))?;
        let grads = backward_pass(
            &features,
            norm_adj,
            &pass,
            &params,
            Some(&masks),
            labels_for_training,
            active,
            weights,
            correction,
            config.weight_decay,
        )?;
        params.step += 1;
        let step = params.step;
        adam_update(
            &mut params.w1,
            &mut params.adam_m1,
            &mut params.adam_v1,
            &grads.w1,
            config.learning_rate,
            step,
        );
        adam_update(
            &mut params.w2,
            &mut params.adam_m2,
            &mut params.adam_v2,
            &grads.w2,
            config.learning_rate,
            step,
        );

        let eval = forward_pass(&features, norm_adj, &params.w1, &params.w2, None)?;
        let predicted: Vec<usize> = eval.probs.row_argmax().iter().map(|&(l, _)| l).collect();
        let val_acc = bundle.accuracy(&predicted, &split.val);
        val_history.push(val_acc);

        if has_val {
            if val_acc > best_val {
                best_val = val_acc;
                best_epoch = epoch;
                best_params = params.clone();
            } else if epoch - best_epoch >= config.patience {
                break;
            }
        }
    }

    if !has_val {
        best_params = params;
        best_val = 0.0;
        best_epoch = epochs_run;
    }
    Ok(TrainedModel {
        params: best_params,
        best_val_accuracy: if has_val { best_val } else { 0.0 },
        best_epoch,
        epochs_run,
        val_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::normalize_adjacency;
    use std::collections::BTreeMap;

    fn five_node_bundle() -> (GraphBundle, SparseMatrixCsr) {
        let adjacency =
            SparseMatrixCsr::from_undirected_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)])
                .unwrap();
        let features = DenseMatrix::from_rows(&[
            vec![0.5, -1.2, 0.3],
            vec![1.0, 0.4, 0.0],
            vec![-0.7, 0.9, 1.1],
            vec![0.2, 0.0, -0.5],
            vec![0.0, 1.3, 0.8],
        ])
        .unwrap();
        let bundle = GraphBundle::new(
            "five",
            adjacency,
            features,
            vec![0, 1, 2, 0, 1],
            3,
            BTreeMap::new(),
        )
        .unwrap();
        let norm = normalize_adjacency(&bundle.adjacency).unwrap();
        (bundle, norm)
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let (bundle, norm) = five_node_bundle();
        let params = GcnParams::zeros(3, 4, 3);
        let probs = forward(&params, &bundle, &norm, None).unwrap();
        for i in 0..5 {
            for &p in probs.row(i) {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rate_zero_masks_equal_no_masks() {
        let (bundle, norm) = five_node_bundle();
        let params = GcnParams::init(3, 4, 3, 17);
        let features = SparseFeatures::from_dense(&bundle.features);
        let mut rng = crate::rng::seeded(4);
        let masks = sample_dropout_masks(&features, 5, 4, 0.0, &mut rng);
        let with = forward(&params, &bundle, &norm, Some(&masks)).unwrap();
        let without = forward(&params, &bundle, &norm, None).unwrap();
        assert_eq!(with, without);
    }

    /// Scalar-loop re-evaluation of the two-layer formula, fully independent
    /// of the matrix code paths.
    fn scalar_reference_forward(
        bundle: &GraphBundle,
        norm_dense: &DenseMatrix,
        w1: &DenseMatrix,
        w2: &DenseMatrix,
    ) -> Vec<Vec<f64>> {
        let n = bundle.num_nodes();
        let d = bundle.features.cols();
        let h = w1.cols();
        let c = w2.cols();
        let mut hidden = vec![vec![0.0; h]; n];
        for i in 0..n {
            for k in 0..h {
                let mut acc = 0.0;
                for j in 0..n {
                    let mut xw = 0.0;
                    for f in 0..d {
                        xw += bundle.features.get(j, f) * w1.get(f, k);
                    }
                    acc += norm_dense.get(i, j) * xw;
                }
                hidden[i][k] = if acc > 0.0 { acc } else { 0.0 };
            }
        }
        let mut out = vec![vec![0.0; c]; n];
        for i in 0..n {
            let mut logits = vec![0.0; c];
            for (cc, logit) in logits.iter_mut().enumerate() {
                for j in 0..n {
                    let mut hw = 0.0;
                    for k in 0..h {
                        hw += hidden[j][k] * w2.get(k, cc);
                    }
                    *logit += norm_dense.get(i, j) * hw;
                }
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for l in &mut logits {
                *l = (*l - max).exp();
                sum += *l;
            }
            for (cc, l) in logits.iter().enumerate() {
                out[i][cc] = l / sum;
            }
        }
        out
    }

    #[test]
    fn forward_matches_scalar_reference() {
        let (bundle, norm) = five_node_bundle();
        let params = GcnParams::init(3, 4, 3, 99);
        let probs = forward(&params, &bundle, &norm, None).unwrap();
        let reference =
            scalar_reference_forward(&bundle, &norm.to_dense(), &params.w1, &params.w2);
        for i in 0..5 {
            for j in 0..3 {
                assert!(
                    (probs.get(i, j) - reference[i][j]).abs() < 1e-10,
                    "({i},{j}): {} vs {}",
                    probs.get(i, j),
                    reference[i][j]
                );
            }
        }
    }

    #[test]
    fn ce_loss_examples() {
        // perfect one-hot predictions
        let probs = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let w = NodeWeights::uniform(2);
        assert_eq!(weighted_ce_loss(&probs, &[0, 1], &[true, true], &w), 0.0);

        // single node, probability 1/2 at the true label
        let probs = DenseMatrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let w = NodeWeights::uniform(1);
        let loss = weighted_ce_loss(&probs, &[0], &[true], &w);
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);

        // weight 2 doubles it
        let w2 = NodeWeights { values: vec![2.0] };
        let loss2 = weighted_ce_loss(&probs, &[0], &[true], &w2);
        assert!((loss2 - 2.0 * 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unit_weights_equal_unweighted_ce_exactly() {
        let (bundle, norm) = five_node_bundle();
        let params = GcnParams::init(3, 4, 3, 5);
        let probs = forward(&params, &bundle, &norm, None).unwrap();
        let active = vec![true, false, true, true, false];
        let weighted = weighted_ce_loss(&probs, &bundle.labels, &active, &NodeWeights::uniform(5));
        let mut plain = 0.0;
        let mut count = 0;
        for i in 0..5 {
            if active[i] {
                plain += -probs.get(i, bundle.labels[i]).ln();
                count += 1;
            }
        }
        assert_eq!(weighted, plain / count as f64);
    }

    #[test]
    fn clamped_probability_is_flagged() {
        let probs = DenseMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let (loss, clamped) =
            weighted_ce_loss_checked(&probs, &[0], &[true], &NodeWeights::uniform(1));
        assert!(clamped);
        assert!((loss - -PROB_EPS.ln()).abs() < 1e-9);
    }

    #[test]
    fn empty_active_set_has_pure_weight_decay_gradient() {
        let (bundle, norm) = five_node_bundle();
        let params = GcnParams::init(3, 4, 3, 21);
        let wd = 0.05;
        let grads = backward(
            &params,
            &bundle,
            &norm,
            &bundle.labels,
            &[false; 5],
            &NodeWeights::uniform(5),
            None,
            None,
            wd,
        )
        .unwrap();
        for (g, &w) in grads.w1.data().iter().zip(params.w1.data()) {
            assert_eq!(*g, wd * w);
        }
        for (g, &w) in grads.w2.data().iter().zip(params.w2.data()) {
            assert_eq!(*g, wd * w);
        }
    }

    #[test]
    fn doubling_node_weights_doubles_ce_gradient() {
        let (bundle, norm) = five_node_bundle();
        let params = GcnParams::init(3, 4, 3, 2);
        let active = vec![true, true, false, true, false];
        let w1 = NodeWeights {
            values: vec![0.5, 1.25, 1.0, 2.0, 1.0],
        };
        let w2 = NodeWeights {
            values: w1.values.iter().map(|v| v * 2.0).collect(),
        };
        let g1 = backward(
            &params, &bundle, &norm, &bundle.labels, &active, &w1, None, None, 0.0,
        )
        .unwrap();
        let g2 = backward(
            &params, &bundle, &norm, &bundle.labels, &active, &w2, None, None, 0.0,
        )
        .unwrap();
        for (a, b) in g1.w1.data().iter().zip(g2.w1.data()) {
            assert_eq!(2.0 * a, *b);
        }
        for (a, b) in g1.w2.data().iter().zip(g2.w2.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    /// Total loss matching the gradients: weighted CE (through the optional
    /// correction) plus (wd/2)||W||^2.
    fn total_loss(
        params: &GcnParams,
        bundle: &GraphBundle,
        norm: &SparseMatrixCsr,
        masks: Option<&DropoutMasks>,
        labels: &[usize],
        active: &[bool],
        weights: &NodeWeights,
        correction: Option<&TransitionMatrix>,
        wd: f64,
    ) -> f64 {
        let probs = forward(params, bundle, norm, masks).unwrap();
        let effective = match correction {
            Some(t) => crate::correction::corrected_prob_matrix(t, &probs),
            None => probs,
        };
        let ce = weighted_ce_loss(&effective, labels, active, weights);
        let reg: f64 = params.w1.data().iter().map(|w| w * w).sum::<f64>()
            + params.w2.data().iter().map(|w| w * w).sum::<f64>();
        ce + 0.5 * wd * reg
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let (bundle, norm) = five_node_bundle();
        let mut params = GcnParams::init(3, 4, 3, 31);
        let features = SparseFeatures::from_dense(&bundle.features);
        let mut rng = crate::rng::seeded(77);
        let masks = sample_dropout_masks(&features, 5, 4, 0.3, &mut rng);
        let active = vec![true, true, false, true, true];
        let weights = NodeWeights {
            values: vec![1.0, 0.5, 1.0, 2.0, 1.5],
        };
        let wd = 0.01;
        let correction = TransitionMatrix::from_matrix(
            DenseMatrix::from_rows(&[
                vec![0.8, 0.1, 0.1],
                vec![0.15, 0.7, 0.15],
                vec![0.05, 0.2, 0.75],
            ])
            .unwrap(),
        )
        .unwrap();

        for use_correction in [false, true] {
            let corr = use_correction.then_some(&correction);
            let grads = backward(
                &params,
                &bundle,
                &norm,
                &bundle.labels,
                &active,
                &weights,
                Some(&masks),
                corr,
                wd,
            )
            .unwrap();
            let h = 1e-5;
            for (which, analytic) in [(0, &grads.w1), (1, &grads.w2)] {
                let entries = analytic.data().len();
                for idx in 0..entries {
                    let read = |p: &GcnParams| if which == 0 { p.w1.data()[idx] } else { p.w2.data()[idx] };
                    let orig = read(&params);
                    let write = |p: &mut GcnParams, v: f64| {
                        if which == 0 {
                            p.w1.data_mut()[idx] = v;
                        } else {
                            p.w2.data_mut()[idx] = v;
                        }
                    };
                    write(&mut params, orig + h);
                    let plus = total_loss(
                        &params, &bundle, &norm, Some(&masks), &bundle.labels, &active, &weights,
                        corr, wd,
                    );
                    write(&mut params, orig - h);
                    let minus = total_loss(
                        &params, &bundle, &norm, Some(&masks), &bundle.labels, &active, &weights,
                        corr, wd,
                    );
                    write(&mut params, orig);
                    let numeric = (plus - minus) / (2.0 * h);
                    let g = analytic.data()[idx];
                    if g.abs() < 1e-8 {
                        assert!(
                            (numeric - g).abs() < 1e-6,
                            "w{} idx {idx}: analytic {g}, numeric {numeric}",
                            which + 1
                        );
                    } else {
                        let rel = (numeric - g).abs() / g.abs();
                        assert!(
                            rel < 1e-4,
                            "w{} idx {idx}: analytic {g}, numeric {numeric}, rel {rel}",
                            which + 1
                        );
                    }
                }
            }
        }
    }

    fn separable_bundle() -> (GraphBundle, SparseMatrixCsr, SplitMasks) {
        let n = 8;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            if i < 4 {
                rows.push(vec![3.0 + 0.1 * i as f64, 0.2]);
                labels.push(0);
            } else {
                rows.push(vec![0.2, 3.0 + 0.1 * i as f64]);
                labels.push(1);
            }
        }
        let edges = [(0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 7)];
        let adjacency = SparseMatrixCsr::from_undirected_edges(n, &edges).unwrap();
        let features = DenseMatrix::from_rows(&rows).unwrap();
        let bundle =
            GraphBundle::new("toy", adjacency, features, labels, 2, BTreeMap::new()).unwrap();
        let norm = normalize_adjacency(&bundle.adjacency).unwrap();
        let split = SplitMasks::new(
            vec![true, true, false, false, true, true, false, false],
            vec![false; 8],
            vec![false, false, true, true, false, false, true, true],
        )
        .unwrap();
        (bundle, norm, split)
    }

    #[test]
    fn separable_toy_reaches_full_training_accuracy_in_20_epochs() {
        let (bundle, norm, split) = separable_bundle();
        let config = TrainConfig {
            max_epochs: 20,
            patience: 20,
            train_dropout: 0.0,
            weight_decay: 0.0,
            learning_rate: 0.1,
            hidden_dim: 8,
            seed: 1,
            ..TrainConfig::default()
        };
        let model = train_gcn(
            &bundle,
            &norm,
            &bundle.labels,
            &split.train,
            &NodeWeights::uniform(8),
            &split,
            &config,
            None,
        )
        .unwrap();
        let pred = predict(&model.params, &bundle, &norm).unwrap();
        assert_eq!(bundle.accuracy(&pred.labels, &split.train), 1.0);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (bundle, norm, split) = separable_bundle();
        let config = TrainConfig {
            max_epochs: 15,
            patience: 15,
            hidden_dim: 6,
            seed: 12,
            ..TrainConfig::default()
        };
        let run = || {
            train_gcn(
                &bundle,
                &norm,
                &bundle.labels,
                &split.train,
                &NodeWeights::uniform(8),
                &split,
                &config,
                None,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.params, b.params);
        assert_eq!(a.val_history, b.val_history);
    }

    #[test]
    fn empty_active_set_is_config_error() {
        let (bundle, norm, split) = separable_bundle();
        let mut empty_split = split.clone();
        empty_split.train = vec![false; 8];
        let r = train_gcn(
            &bundle,
            &norm,
            &bundle.labels,
            &[false; 8],
            &NodeWeights::uniform(8),
            &empty_split,
            &TrainConfig::default(),
            None,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn early_stopping_returns_first_best_epoch() {
        let (bundle, norm, _) = separable_bundle();
        let split = SplitMasks::new(
            vec![true, true, false, false, true, true, false, false],
            vec![false, false, true, false, false, false, true, false],
            vec![false, false, false, true, false, false, false, true],
        )
        .unwrap();
        let config = TrainConfig {
            max_epochs: 40,
            patience: 40,
            hidden_dim: 6,
            seed: 3,
            ..TrainConfig::default()
        };
        let model = train_gcn(
            &bundle,
            &norm,
            &bundle.labels,
            &split.train,
            &NodeWeights::uniform(8),
            &split,
            &config,
            None,
        )
        .unwrap();
        let max = model
            .val_history
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(model.best_val_accuracy, max);
        let first_best = model.val_history.iter().position(|&v| v == max).unwrap() + 1;
        assert_eq!(model.best_epoch, first_best);
        for &later in &model.val_history[model.best_epoch..] {
            assert!(model.best_val_accuracy >= later);
        }
    }

    #[test]
    fn predict_examples() {
        // uniform row: tie broken toward class 0, confidence 1/c
        let (bundle, norm) = five_node_bundle();
        let zero = GcnParams::zeros(3, 4, 3);
        let pred = predict(&zero, &bundle, &norm).unwrap();
        assert!(pred.labels.iter().all(|&l| l == 0));
        assert!(pred.confidence.iter().all(|&c| (c - 1.0 / 3.0).abs() < 1e-12));

        let rowpred = prediction_from_probs(
            DenseMatrix::from_rows(&[vec![0.1, 0.7, 0.2]]).unwrap(),
        );
        assert_eq!(rowpred.labels, vec![1]);
        assert_eq!(rowpred.confidence, vec![0.7]);
    }
}
