//! The self-training stage loop: teacher training, confidence-thresholded
//! pseudo-label selection, information-gain weighting, transition-matrix
//! fitting, corrected student retraining and teacher replacement.
//!
//! Each stage trains the student at most twice (once plain, once through
//! the fitted transition matrix) and runs the Monte-Carlo estimator only on
//! the final layer, so a stage costs roughly two plain trainings plus the
//! sampling passes.

use serde::{Deserialize, Serialize};

use crate::bundle::{GraphBundle, SplitMasks};
use crate::correction::{fit_transition, FitOptions, TransitionMatrix};
use crate::error::{Error, Result};
use crate::gain::{estimate_gain, McConfig};
use crate::gcn::{predict, train_gcn, GcnParams, NodeWeights, Prediction, TrainConfig, TrainedModel};
use crate::sparse::SparseMatrixCsr;
use crate::stats;

/// Pseudo-labeled selection: node ids from the unlabeled pool with the
/// teacher's argmax label, its confidence, and (once estimated) the raw and
/// normalized information gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub node_ids: Vec<usize>,
    pub pseudo_label: Vec<usize>,
    pub confidence: Vec<f64>,
    pub gain: Vec<f64>,
    pub weight: Vec<f64>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }
}

/// One self-training run's configuration. `train.seed` acts as the master
/// seed: stage `k` derives its sub-seed as `master + k` so earlier stages
/// are unaffected by the stage budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub threshold: f64,
    pub beta: f64,
    pub mc: McConfig,
    pub train: TrainConfig,
    pub num_stages: usize,
    pub use_gain_weights: bool,
    pub use_loss_correction: bool,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            threshold: 0.5,
            beta: 1.0 / 3.0,
            mc: McConfig::default(),
            train: TrainConfig::default(),
            num_stages: 5,
            use_gain_weights: true,
            use_loss_correction: true,
        }
    }
}

impl StageConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let lower = 1.0 / num_classes as f64;
        if !(self.threshold > lower && self.threshold < 1.0) {
            return Err(Error::config(format!(
                "threshold must lie in (1/{num_classes}, 1), got {}",
                self.threshold
            )));
        }
        if self.num_stages == 0 {
            return Err(Error::config("num_stages must be at least 1"));
        }
        if self.beta <= 0.0 || !self.beta.is_finite() {
            return Err(Error::config("beta must be positive"));
        }
        self.mc.validate()?;
        self.train.validate()
    }
}

/// Per-stage metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub num_pseudo: usize,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub pseudo_error_rate: Option<f64>,
    pub transition: Option<Vec<f64>>,
    pub mean_gain: f64,
    pub empty_selection: bool,
    pub degenerate_gain: bool,
}

/// Pool nodes whose confidence strictly exceeds the threshold, with the
/// teacher's argmax as the pseudo label. Gains and weights are left empty.
pub fn select_pseudo(
    prediction: &Prediction,
    pool: &[bool],
    threshold: f64,
) -> PseudoLabelSet {
    let mut set = PseudoLabelSet {
        node_ids: Vec::new(),
        pseudo_label: Vec::new(),
        confidence: Vec::new(),
        gain: Vec::new(),
        weight: Vec::new(),
    };
    for (u, &in_pool) in pool.iter().enumerate() {
        if in_pool && prediction.confidence[u] > threshold {
            set.node_ids.push(u);
            set.pseudo_label.push(prediction.labels[u]);
            set.confidence.push(prediction.confidence[u]);
        }
    }
    set
}

/// The materialized training problem for one stage.
#[derive(Debug, Clone)]
pub struct StagePlan {
    pub pseudo: PseudoLabelSet,
    pub labels_for_training: Vec<usize>,
    pub active: Vec<bool>,
    pub weights: NodeWeights,
    pub mean_gain: f64,
    pub degenerate_gain: bool,
}

/// Select, pseudo-label and weight: everything up to student training.
pub fn plan_stage(
    bundle: &GraphBundle,
    split: &SplitMasks,
    teacher: &GcnParams,
    norm_adj: &SparseMatrixCsr,
    cfg: &StageConfig,
) -> Result<StagePlan> {
    let teacher_pred = predict(teacher, bundle, norm_adj)?;
    let pool = GraphBundle::pseudo_pool_mask(split);
    let mut pseudo = select_pseudo(&teacher_pred, &pool, cfg.threshold);

    let mut mean_gain = 0.0;
    let mut degenerate_gain = false;
    if pseudo.is_empty() {
        // valid: the stage proceeds on the ground-truth set alone
    } else if cfg.use_gain_weights {
        let report = estimate_gain(
            teacher,
            bundle,
            norm_adj,
            &cfg.mc,
            &pseudo.node_ids,
            cfg.beta,
        )?;
        pseudo.gain = pseudo.node_ids.iter().map(|&u| report.gain[u]).collect();
        pseudo.weight = report.normalized_gain.clone();
        mean_gain = stats::mean(&pseudo.gain);
        degenerate_gain = report.degenerate;
    } else {
        pseudo.gain = vec![0.0; pseudo.len()];
        pseudo.weight = vec![1.0; pseudo.len()];
    }

    let mut labels_for_training = bundle.labels.clone();
    let mut active = split.train.clone();
    let mut weights = NodeWeights::uniform(bundle.num_nodes());
    for (idx, &u) in pseudo.node_ids.iter().enumerate() {
        labels_for_training[u] = pseudo.pseudo_label[idx];
        active[u] = true;
        weights.values[u] = pseudo.weight[idx];
    }

    Ok(StagePlan {
        pseudo,
        labels_for_training,
        active,
        weights,
        mean_gain,
        degenerate_gain,
    })
}

/// One full stage: select, weight, train the student plain, fit the
/// transition matrix on the labeled nodes, retrain through it, and report.
/// With loss correction disabled the transition stays at the identity and
/// the plain student is returned directly (retraining with the identity and
/// the same seed reproduces it bit-for-bit).
pub fn run_stage(
    bundle: &GraphBundle,
    split: &SplitMasks,
    teacher: &GcnParams,
    norm_adj: &SparseMatrixCsr,
    cfg: &StageConfig,
) -> Result<(TrainedModel, StageReport)> {
    cfg.validate(bundle.num_classes)?;
    let plan = plan_stage(bundle, split, teacher, norm_adj, cfg)?;

    let first = train_gcn(
        bundle,
        norm_adj,
        &plan.labels_for_training,
        &plan.active,
        &plan.weights,
        split,
        &cfg.train,
        None,
    )?;

    let (student, transition) = if cfg.use_loss_correction {
        let probs = predict(&first.params, bundle, norm_adj)?.probabilities;
        let labeled_ids = SplitMasks::ids(&split.train);
        let mut labeled_probs = crate::dense::DenseMatrix::zeros(labeled_ids.len(), bundle.num_classes);
        let mut labeled_labels = Vec::with_capacity(labeled_ids.len());
        for (row, &i) in labeled_ids.iter().enumerate() {
            labeled_probs.row_mut(row).copy_from_slice(probs.row(i));
            labeled_labels.push(bundle.labels[i]);
        }
        let fit = fit_transition(
            &labeled_probs,
            &labeled_labels,
            bundle.num_classes,
            &FitOptions::default(),
        )?;
        let retrained = train_gcn(
            bundle,
            norm_adj,
            &plan.labels_for_training,
            &plan.active,
            &plan.weights,
            split,
            &cfg.train,
            Some(&fit.transition),
        )?;
        (retrained, Some(fit.transition))
    } else {
        (first, None)
    };

    let final_pred = predict(&student.params, bundle, norm_adj)?;
    let pseudo_error_rate = if plan.pseudo.is_empty() {
        None
    } else {
        let wrong = plan
            .pseudo
            .node_ids
            .iter()
            .zip(&plan.pseudo.pseudo_label)
            .filter(|(&u, &l)| bundle.labels[u] != l)
            .count();
        Some(wrong as f64 / plan.pseudo.len() as f64)
    };

    let report = StageReport {
        stage: 0, // filled by the caller
        num_pseudo: plan.pseudo.len(),
        val_accuracy: bundle.accuracy(&final_pred.labels, &split.val),
        test_accuracy: bundle.accuracy(&final_pred.labels, &split.test),
        pseudo_error_rate,
        transition: transition.as_ref().map(TransitionMatrix::to_row_major),
        mean_gain: plan.mean_gain,
        empty_selection: plan.pseudo.is_empty(),
        degenerate_gain: plan.degenerate_gain,
    };
    Ok((student, report))
}

/// Outcome of a full run: the best-validation student across stages and
/// the per-stage reports.
#[derive(Debug, Clone)]
pub struct SelfTrainOutcome {
    pub model: GcnParams,
    pub best_stage: usize,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub teacher_val_accuracy: f64,
    pub teacher_test_accuracy: f64,
    pub reports: Vec<StageReport>,
}

/// The full loop: train the initial teacher on the ground-truth split, run
/// the configured number of stages (each replacing the teacher with its
/// student), and return the student with the best validation accuracy
/// across stages (ties keep the earlier stage).
pub fn run_dr_gst(
    bundle: &GraphBundle,
    split: &SplitMasks,
    norm_adj: &SparseMatrixCsr,
    cfg: &StageConfig,
) -> Result<SelfTrainOutcome> {
    cfg.validate(bundle.num_classes)?;
    let master = cfg.train.seed;

    let teacher_cfg = TrainConfig {
        seed: master,
        ..cfg.train.clone()
    };
    let teacher = train_gcn(
        bundle,
        norm_adj,
        &bundle.labels,
        &split.train,
        &NodeWeights::uniform(bundle.num_nodes()),
        split,
        &teacher_cfg,
        None,
    )?;
    let teacher_pred = predict(&teacher.params, bundle, norm_adj)?;
    let teacher_val_accuracy = bundle.accuracy(&teacher_pred.labels, &split.val);
    let teacher_test_accuracy = bundle.accuracy(&teacher_pred.labels, &split.test);

    let mut current = teacher.params;
    let mut reports = Vec::with_capacity(cfg.num_stages);
    let mut best: Option<(usize, f64, f64, GcnParams)> = None;

    for stage in 1..=cfg.num_stages {
        let stage_seed = master.wrapping_add(stage as u64);
        let mut stage_cfg = cfg.clone();
        stage_cfg.train.seed = stage_seed;
        stage_cfg.mc.seed = stage_seed.wrapping_add(0x9E37_79B9_7F4A_7C15);

        let (student, mut report) = run_stage(bundle, split, &current, norm_adj, &stage_cfg)?;
        report.stage = stage;

        let replace = match &best {
            None => true,
            Some((_, best_val, _, _)) => report.val_accuracy > *best_val,
        };
        if replace {
            best = Some((
                stage,
                report.val_accuracy,
                report.test_accuracy,
                student.params.clone(),
            ));
        }
        current = student.params;
        reports.push(report);
    }

    let (best_stage, val_accuracy, test_accuracy, model) =
        best.expect("at least one stage ran");
    Ok(SelfTrainOutcome {
        model,
        best_stage,
        val_accuracy,
        test_accuracy,
        teacher_val_accuracy,
        teacher_test_accuracy,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;

    fn prediction(rows: &[Vec<f64>]) -> Prediction {
        crate::gcn::prediction_from_probs(DenseMatrix::from_rows(rows).unwrap())
    }

    #[test]
    fn select_examples() {
        let pred = prediction(&[vec![0.9, 0.1], vec![0.55, 0.45]]);
        let pool = vec![true, true];
        let set = select_pseudo(&pred, &pool, 0.6);
        assert_eq!(set.node_ids, vec![0]);
        assert_eq!(set.pseudo_label, vec![0]);
        assert_eq!(set.confidence, vec![0.9]);
    }

    #[test]
    fn select_empty_pool_gives_empty_set() {
        let pred = prediction(&[vec![0.9, 0.1]]);
        assert!(select_pseudo(&pred, &[false], 0.5).is_empty());
    }

    #[test]
    fn select_threshold_above_all_confidences_gives_empty_set() {
        let pred = prediction(&[vec![0.9, 0.1], vec![0.8, 0.2]]);
        assert!(select_pseudo(&pred, &[true, true], 0.95).is_empty());
    }

    #[test]
    fn selection_is_monotone_in_threshold() {
        let pred = prediction(&[
            vec![0.9, 0.1],
            vec![0.7, 0.3],
            vec![0.52, 0.48],
            vec![0.6, 0.4],
        ]);
        let pool = vec![true; 4];
        let mut previous: Option<Vec<usize>> = None;
        for tau in [0.51, 0.55, 0.65, 0.75, 0.95] {
            let ids = select_pseudo(&pred, &pool, tau).node_ids;
            if let Some(prev) = &previous {
                assert!(ids.iter().all(|u| prev.contains(u)), "tau={tau}");
            }
            previous = Some(ids);
        }
    }
}
