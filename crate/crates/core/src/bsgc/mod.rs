//! Bipartite spectral clustering of one linear layer.
//!
//! The similarity `A` (input × output neurons) is degree-normalized, its top-`k`
//! singular vectors embed both sides, and each side is clustered separately with
//! k-means. Output-side labels are then renamed so that output cluster `c` is the
//! partner of input cluster `c`.

mod assignment;
mod kmeans;
mod similarity;
mod spectral;

pub use assignment::{load_assignment, save_assignment, ClusterAssignment};
pub use kmeans::{kmeans, kmeans_rows, MAX_ITERATIONS, RESTARTS, SHIFT_TOLERANCE};
pub use similarity::{
    gradient_similarity, layer_matrix, layer_weight_similarity, matrix_to_layer, weight_similarity,
    GradientAccumulator, SimilarityMatrix, SimilaritySource,
};
pub use spectral::{normalize, svd_topk, NormalizedSimilarity, TruncatedSvd, ISOLATED_EPS};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Picks the heaviest unmatched (u, v) cluster pair until every cluster is matched.
/// Returns `map[v] = u`.
fn greedy_alignment(mass: &[Vec<f64>]) -> Vec<usize> {
    let k = mass.len();
    let mut map = vec![usize::MAX; k];
    let mut used_u = vec![false; k];
    for _ in 0..k {
        let mut best: Option<(usize, usize)> = None;
        for (u, row) in mass.iter().enumerate() {
            if used_u[u] {
                continue;
            }
            for (v, &m) in row.iter().enumerate() {
                if map[v] != usize::MAX {
                    continue;
                }
                if best.is_none_or(|(bu, bv)| m > mass[bu][bv]) {
                    best = Some((u, v));
                }
            }
        }
        let (u, v) = best.expect("unmatched pair remains");
        used_u[u] = true;
        map[v] = u;
    }
    map
}

/// Label of the cluster with the largest incident mass; ties go to the lowest label.
fn heaviest_cluster(weights: impl Iterator<Item = (f64, usize)>, k: usize) -> usize {
    let mut mass = vec![0.0; k];
    for (w, label) in weights {
        mass[label] += w;
    }
    let mut best = 0;
    for c in 1..k {
        if mass[c] > mass[best] {
            best = c;
        }
    }
    best
}

/// Runs normalize → top-k SVD → k-means on each side → alignment.
/// Isolated neurons are left out of the embedding and attached afterwards to the
/// cluster holding most of their incident similarity.
pub fn bsgc(a: &SimilarityMatrix, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let (m, n) = (a.rows(), a.cols());
    if k == 0 || k > m.min(n) {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={} for a {m}×{n} layer", m.min(n))));
    }
    let normalized = normalize(a)?;
    let svd = svd_topk(&normalized.matrix, k)?;

    let active_rows: Vec<usize> = (0..m).filter(|&i| !normalized.isolated_rows[i]).collect();
    let active_cols: Vec<usize> = (0..n).filter(|&j| !normalized.isolated_cols[j]).collect();
    let embed = |vectors: &DMatrix<f64>, idx: &[usize]| -> Vec<Vec<f64>> {
        idx.iter().map(|&i| vectors.row(i).iter().copied().collect()).collect()
    };
    let u_active = kmeans_rows(&embed(&svd.u, &active_rows), k, seed)?;
    let v_active = kmeans_rows(&embed(&svd.v, &active_cols), k, seed.wrapping_add(1))?;

    let mut mass = vec![vec![0.0; k]; k];
    for (&i, &lu) in active_rows.iter().zip(&u_active) {
        for (&j, &lv) in active_cols.iter().zip(&v_active) {
            mass[lu][lv] += a.values[(i, j)];
        }
    }
    let v_to_u = greedy_alignment(&mass);

    let mut u_labels = vec![usize::MAX; m];
    let mut v_labels = vec![usize::MAX; n];
    for (&i, &l) in active_rows.iter().zip(&u_active) {
        u_labels[i] = l;
    }
    for (&j, &l) in active_cols.iter().zip(&v_active) {
        v_labels[j] = v_to_u[l];
    }
    for i in (0..m).filter(|&i| normalized.isolated_rows[i]) {
        let incident = active_cols.iter().map(|&j| (a.values[(i, j)], v_labels[j]));
        u_labels[i] = heaviest_cluster(incident, k);
    }
    for j in (0..n).filter(|&j| normalized.isolated_cols[j]) {
        let incident = (0..m).map(|i| (a.values[(i, j)], u_labels[i]));
        v_labels[j] = heaviest_cluster(incident, k);
    }
    ClusterAssignment::new(k, u_labels, v_labels, 0)
}
