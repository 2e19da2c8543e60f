//! Class-transition matrix estimation and loss correction. The student's
//! training-time output is read through a fixed row-stochastic matrix `T`
//! (entry `T[k][j]` = probability that true class `k` surfaces as pseudo
//! label `j`), which lets the student train on noisy pseudo labels and
//! still converge toward the clean-label model.

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// `c x c` class-transition matrix. After fitting (projection step) the
/// entries are nonnegative and every row sums to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    t: DenseMatrix,
}

impl TransitionMatrix {
    pub fn identity(num_classes: usize) -> Self {
        let mut t = DenseMatrix::zeros(num_classes, num_classes);
        for k in 0..num_classes {
            t.set(k, k, 1.0);
        }
        TransitionMatrix { t }
    }

    pub fn from_matrix(t: DenseMatrix) -> Result<Self> {
        if t.rows() != t.cols() {
            return Err(Error::structural("transition matrix must be square"));
        }
        if !t.is_finite() {
            return Err(Error::structural("transition matrix must be finite"));
        }
        Ok(TransitionMatrix { t })
    }

    /// Build from a permutation `sigma`, mapping true class `k` to pseudo
    /// label `sigma[k]`.
    pub fn from_permutation(sigma: &[usize]) -> Result<Self> {
        let c = sigma.len();
        let mut seen = vec![false; c];
        let mut t = DenseMatrix::zeros(c, c);
        for (k, &j) in sigma.iter().enumerate() {
            if j >= c || seen[j] {
                return Err(Error::structural("not a permutation"));
            }
            seen[j] = true;
            t.set(k, j, 1.0);
        }
        Ok(TransitionMatrix { t })
    }

    pub fn num_classes(&self) -> usize {
        self.t.rows()
    }

    #[inline]
    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.t.get(k, j)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.t
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        let c = self.num_classes();
        (0..c).all(|k| (0..c).all(|j| (self.get(k, j) - if k == j { 1.0 } else { 0.0 }).abs() <= tol))
    }

    /// Row-major entries, for report serialization.
    pub fn to_row_major(&self) -> Vec<f64> {
        self.t.data().to_vec()
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        (0..self.t.rows()).all(|k| {
            let row = self.t.row(k);
            row.iter().all(|&v| v >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= tol
        })
    }
}

/// Corrected probability row: `corrected[j] = sum_k T[k][j] * clean[k]`.
/// With a row-stochastic `T` the output is again a probability row.
pub fn corrected_probs(transition: &TransitionMatrix, clean: &[f64]) -> Vec<f64> {
    let c = transition.num_classes();
    debug_assert_eq!(clean.len(), c);
    let mut out = vec![0.0; c];
    for (k, &p) in clean.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o += transition.get(k, j) * p;
        }
    }
    out
}

/// Row-wise correction of a probability matrix (`P T`).
pub fn corrected_prob_matrix(transition: &TransitionMatrix, probs: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(probs.rows(), probs.cols());
    for i in 0..probs.rows() {
        let row = corrected_probs(transition, probs.row(i));
        out.row_mut(i).copy_from_slice(&row);
    }
    out
}

/// Options for the transition fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub step_size: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            step_size: 0.01,
            max_iterations: 2000,
            gradient_tolerance: 1e-6,
        }
    }
}

/// Outcome of a transition fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub transition: TransitionMatrix,
    /// Objective value per iteration (including the starting point).
    pub objective_history: Vec<f64>,
    /// Classes with no labeled node; their rows stayed at the identity.
    pub missing_classes: Vec<usize>,
    pub iterations: usize,
}

fn objective(
    t: &DenseMatrix,
    class_counts: &[usize],
    class_sums: &DenseMatrix,
    class_sq_norms: &[f64],
) -> f64 {
    let c = t.rows();
    // sum_k sum_{i in class k} ||T_k - p_i||^2, expanded so only per-class
    // sufficient statistics are needed.
    let mut fit = 0.0;
    for k in 0..c {
        let trow = t.row(k);
        let srow = class_sums.row(k);
        let mut tt = 0.0;
        let mut ts = 0.0;
        for (&tv, &sv) in trow.iter().zip(srow) {
            tt += tv * tv;
            ts += tv * sv;
        }
        fit += class_counts[k] as f64 * tt - 2.0 * ts + class_sq_norms[k];
    }
    // || T T^T - I ||_F^2
    let mut reg = 0.0;
    for a in 0..c {
        for b in 0..c {
            let mut dot = 0.0;
            for j in 0..c {
                dot += t.get(a, j) * t.get(b, j);
            }
            let r = dot - if a == b { 1.0 } else { 0.0 };
            reg += r * r;
        }
    }
    fit + reg
}

/// Fit the transition matrix from the student's probabilities on the
/// ground-truth-labeled nodes: minimize the per-class squared distance of
/// each row to the class's predicted rows plus `||T T^T - I||^2`, starting
/// from the identity. Gradient descent starts at `step_size` and halves the
/// step whenever an iteration would increase the objective, so the
/// objective history is nonincreasing. Rows of classes absent from the
/// labeled set are frozen at the identity and reported. The returned matrix
/// is projected back to the simplex (clamp at zero, renormalize rows).
pub fn fit_transition(
    student_probs_on_labeled: &DenseMatrix,
    labels: &[usize],
    num_classes: usize,
    opts: &FitOptions,
) -> Result<FitResult> {
    if student_probs_on_labeled.rows() != labels.len() {
        return Err(Error::structural("probability rows and labels differ in length"));
    }
    if student_probs_on_labeled.cols() != num_classes {
        return Err(Error::structural("probability columns must equal num_classes"));
    }
    if labels.iter().any(|&l| l >= num_classes) {
        return Err(Error::structural("label out of range"));
    }

    let c = num_classes;
    let mut class_counts = vec![0usize; c];
    let mut class_sums = DenseMatrix::zeros(c, c);
    let mut class_sq_norms = vec![0.0; c];
    for (i, &k) in labels.iter().enumerate() {
        class_counts[k] += 1;
        let prow = student_probs_on_labeled.row(i);
        let srow = class_sums.row_mut(k);
        for (s, &p) in srow.iter_mut().zip(prow) {
            *s += p;
        }
        class_sq_norms[k] += prow.iter().map(|p| p * p).sum::<f64>();
    }
    let missing_classes: Vec<usize> = (0..c).filter(|&k| class_counts[k] == 0).collect();

    let mut t = TransitionMatrix::identity(c).t;
    let mut step = opts.step_size;
    let mut history = vec![objective(&t, &class_counts, &class_sums, &class_sq_norms)];
    let mut iterations = 0usize;

    for _ in 0..opts.max_iterations {
        // grad = 2 (N_k T_k - S_k) per row + 4 (T T^T - I) T, with rows of
        // absent classes frozen.
        let ttt = t.matmul(&t.transpose())?;
        let mut residual = ttt;
        for a in 0..c {
            let v = residual.get(a, a) - 1.0;
            residual.set(a, a, v);
        }
        let mut grad = residual.matmul(&t)?.scale(4.0);
        for k in 0..c {
            let count = class_counts[k] as f64;
            let trow = t.row(k);
            let srow = class_sums.row(k);
            let grow = grad.row_mut(k);
            for ((g, &tv), &sv) in grow.iter_mut().zip(trow).zip(srow) {
                *g += 2.0 * (count * tv - sv);
            }
        }
        for &k in &missing_classes {
            grad.row_mut(k).fill(0.0);
        }

        let max_grad = grad.data().iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if max_grad < opts.gradient_tolerance {
            break;
        }

        let current = *history.last().unwrap();
        loop {
            let mut candidate = t.clone();
            for (tv, &g) in candidate.data_mut().iter_mut().zip(grad.data()) {
                *tv -= step * g;
            }
            let value = objective(&candidate, &class_counts, &class_sums, &class_sq_norms);
            if value <= current || step < 1e-18 {
                t = candidate;
                history.push(value.min(current));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
    }

    // Simplex projection: entries are conditional probabilities.
    for k in 0..c {
        let row = t.row_mut(k);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
            sum += *v;
        }
        if sum <= 0.0 {
            row.fill(0.0);
            row[k] = 1.0;
        } else {
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }
    for &k in &missing_classes {
        let row = t.row_mut(k);
        row.fill(0.0);
        row[k] = 1.0;
    }

    Ok(FitResult {
        transition: TransitionMatrix { t },
        objective_history: history,
        missing_classes,
        iterations,
    })
}
