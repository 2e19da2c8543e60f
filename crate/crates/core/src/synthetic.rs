//! Synthetic two-population generator: a tight 2-D Gaussian class inside a
//! pair of concentric rings, wired into a symmetric k-nearest-neighbor
//! graph. Node features are the raw 2-D coordinates.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::GraphBundle;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::rng;
use crate::sparse::SparseMatrixCsr;

/// Bivariate normal parameters (means, standard deviations, correlation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho: f64,
}

impl Default for GaussianParams {
    fn default() -> Self {
        GaussianParams {
            mu_x: 0.0,
            mu_y: 0.0,
            sigma_x: 0.3,
            sigma_y: 0.3,
            rho: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub gaussian_count: usize,
    pub gaussian_params: GaussianParams,
    pub circles_count: usize,
    pub knn_k: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            gaussian_count: 500,
            gaussian_params: GaussianParams::default(),
            circles_count: 4000,
            knn_k: 10,
            noise: 0.05,
            seed: 0,
        }
    }
}

/// Ring radii for the second class.
const INNER_RADIUS: f64 = 1.0;
const OUTER_RADIUS: f64 = 2.0;

fn standard_normal(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    // Box-Muller, cosine branch only.
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generate the two-class point cloud and its kNN graph.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<GraphBundle> {
    if spec.gaussian_count == 0 || spec.circles_count == 0 {
        return Err(Error::config("point counts must be positive"));
    }
    if spec.knn_k == 0 {
        return Err(Error::config("knn_k must be at least 1"));
    }
    let mut stream = rng::seeded(spec.seed);
    let n = spec.gaussian_count + spec.circles_count;
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);

    let g = spec.gaussian_params;
    let rho_rest = (1.0 - g.rho * g.rho).sqrt();
    for _ in 0..spec.gaussian_count {
        let z1 = standard_normal(&mut stream);
        let z2 = standard_normal(&mut stream);
        let x = g.mu_x + g.sigma_x * z1;
        let y = g.mu_y + g.sigma_y * (g.rho * z1 + rho_rest * z2);
        points.push((x, y));
        labels.push(0);
    }
    let inner = spec.circles_count / 2;
    for i in 0..spec.circles_count {
        let base = if i < inner { INNER_RADIUS } else { OUTER_RADIUS };
        let angle: f64 = stream.gen::<f64>() * 2.0 * std::f64::consts::PI;
        let radius = base + spec.noise * standard_normal(&mut stream);
        points.push((radius * angle.cos(), radius * angle.sin()));
        labels.push(1);
    }

    // Symmetric kNN graph: union of each node's k nearest neighbors.
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for u in 0..n {
        let (ux, uy) = points[u];
        let mut nearest: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
        for (v, &(vx, vy)) in points.iter().enumerate() {
            if v == u {
                continue;
            }
            let dx = ux - vx;
            let dy = uy - vy;
            nearest.push((dx * dx + dy * dy, v));
        }
        let k = spec.knn_k.min(nearest.len());
        nearest.select_nth_unstable_by(k - 1, |a, b| {
            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
        });
        for &(_, v) in &nearest[..k] {
            edges.insert((u.min(v), u.max(v)));
        }
    }
    let edge_list: Vec<(usize, usize)> = edges.into_iter().collect();
    let adjacency = SparseMatrixCsr::from_undirected_edges(n, &edge_list)?;

    let mut feature_data = Vec::with_capacity(n * 2);
    for &(x, y) in &points {
        feature_data.push(x);
        feature_data.push(y);
    }
    let features = DenseMatrix::from_vec(n, 2, feature_data)?;
    GraphBundle::new(
        "synthetic",
        adjacency,
        features,
        labels,
        2,
        Default::default(),
    )
}
