//! Seeded k-means++ initialization followed by Lloyd iterations.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 300;
pub const SHIFT_TOLERANCE: f64 = 1e-9;
/// Independent k-means++ starts; the lowest-SSE result wins.
pub const RESTARTS: u64 = 10;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid for every point; ties go to the lower centroid index.
fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize]) {
    for (p, label) in points.iter().zip(labels.iter_mut()) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.iter().enumerate() {
            let d = sq_dist(p, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        *label = best;
    }
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Moves the point farthest from its centroid into each empty cluster. Clusters stay
/// empty when every point already sits on its centroid (no split lowers the SSE).
fn repair_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], labels: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let mut far = None;
        let mut far_d = 0.0;
        for (i, p) in points.iter().enumerate() {
            if counts[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[labels[i]]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { return };
        labels[i] = empty;
        centroids[empty] = points[i].clone();
    }
}

fn recompute(points: &[Vec<f64>], labels: &[usize], centroids: &mut [Vec<f64>]) -> f64 {
    let dim = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    let mut shift: f64 = 0.0;
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        let mean: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        shift = shift.max(sq_dist(&mean, &centroids[c]).sqrt());
        centroids[c] = mean;
    }
    shift
}

/// Clusters the rows of `points` into `k` groups; returns one label per row.
pub fn kmeans(points: &DMatrix<f64>, k: usize, seed: u64) -> Result<Vec<usize>> {
    let rows: Vec<Vec<f64>> = points.row_iter().map(|r| r.iter().copied().collect()).collect();
    kmeans_rows(&rows, k, seed)
}

pub fn kmeans_rows(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::InvalidArgument(format!("{} points cannot form {k} clusters", points.len())));
    }
    if k == 1 {
        return Ok(vec![0; points.len()]);
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart);
        let (labels, sse) = lloyd(points, k, &mut rng);
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, labels));
        }
    }
    Ok(best.expect("at least one restart").1)
}

fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let mut centroids = plus_plus_init(points, k, rng);
    let mut labels = vec![0; points.len()];
    for _ in 0..MAX_ITERATIONS {
        assign(points, &centroids, &mut labels);
        repair_empty(points, &mut centroids, &mut labels);
        if recompute(points, &labels, &mut centroids) < SHIFT_TOLERANCE {
            break;
        }
    }
    assign(points, &centroids, &mut labels);
    repair_empty(points, &mut centroids, &mut labels);
    recompute(points, &labels, &mut centroids);
    let sse = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum();
    (labels, sse)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sse(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
        let dim = points[0].len();
        let mut total = 0.0;
        for c in 0..k {
            let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            let mean: Vec<f64> =
                (0..dim).map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64).collect();
            total += members.iter().map(|p| sq_dist(p, &mean)).sum::<f64>();
        }
        total
    }

    /// Exhaustive minimum-SSE 2-partition.
    fn brute_force_two(points: &[Vec<f64>]) -> Vec<usize> {
        let n = points.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1u32..(1 << n) - 1 {
            let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let s = sse(points, &labels, 2);
            if s < best.0 {
                best = (s, labels);
            }
        }
        best.1
    }

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x == &a[0]) == (y == &b[0]))
    }

    #[test]
    fn two_blobs_match_brute_force() {
        let points: Vec<Vec<f64>> = vec![
            vec![0.0, 0.1],
            vec![0.2, -0.1],
            vec![-0.1, 0.0],
            vec![0.1, 0.2],
            vec![5.0, 5.1],
            vec![5.2, 4.9],
            vec![4.8, 5.0],
            vec![5.1, 5.3],
            vec![4.9, 4.7],
        ];
        let oracle = brute_force_two(&points);
        for seed in 0..10 {
            let labels = kmeans_rows(&points, 2, seed).unwrap();
            assert!(same_partition(&labels, &oracle), "seed {seed}: {labels:?} vs {oracle:?}");
        }
    }

    #[test]
    fn restarts_never_lose_to_the_first_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let points: Vec<Vec<f64>> =
                (0..40).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let mut first = ChaCha8Rng::seed_from_u64(4);
            let (single, single_sse) = lloyd(&points, 4, &mut first);
            let best = kmeans_rows(&points, 4, 4).unwrap();
            assert!(sse(&points, &best, 4) <= single_sse + 1e-12);
            assert!((sse(&points, &single, 4) - single_sse).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_points_share_one_label() {
        let points = vec![vec![1.0, 2.0]; 6];
        let labels = kmeans_rows(&points, 3, 9).unwrap();
        assert!(labels.iter().all(|&l| l == labels[0]));
        assert_eq!(labels, kmeans_rows(&points, 3, 9).unwrap());
    }

    #[test]
    fn k_one_is_all_zero() {
        let points = vec![vec![1.0], vec![-3.0], vec![8.0]];
        assert_eq!(kmeans_rows(&points, 1, 0).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn too_few_points() {
        let points = vec![vec![1.0], vec![2.0]];
        assert!(kmeans_rows(&points, 3, 0).is_err());
    }

    #[test]
    fn every_cluster_used_when_points_distinct() {
        let points: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let mut labels = kmeans_rows(&points, 5, 1).unwrap();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn seeded_runs_agree() {
        let points: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()]).collect();
        assert_eq!(kmeans_rows(&points, 4, 5).unwrap(), kmeans_rows(&points, 4, 5).unwrap());
    }
}
