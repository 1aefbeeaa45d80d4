use nalgebra::DMatrix;

use super::similarity::SimilarityMatrix;
use crate::error::{Error, Result};

/// Degree threshold below which a neuron counts as isolated.
pub const ISOLATED_EPS: f64 = 1e-12;

/// `D_U^{-1/2} A D_V^{-1/2}` with isolated rows/columns flagged (their degree is taken as 1).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSimilarity {
    pub matrix: DMatrix<f64>,
    pub isolated_rows: Vec<bool>,
    pub isolated_cols: Vec<bool>,
}

pub fn normalize(a: &SimilarityMatrix) -> Result<NormalizedSimilarity> {
    let values = &a.values;
    let total = values.sum();
    if !(total >= ISOLATED_EPS) {
        return Err(Error::DegenerateSimilarity(total));
    }
    let row_sums: Vec<f64> = values.row_iter().map(|r| r.sum()).collect();
    let col_sums: Vec<f64> = values.column_iter().map(|c| c.sum()).collect();
    let isolated_rows: Vec<bool> = row_sums.iter().map(|&s| s < ISOLATED_EPS).collect();
    let isolated_cols: Vec<bool> = col_sums.iter().map(|&s| s < ISOLATED_EPS).collect();
    let du: Vec<f64> = row_sums.iter().zip(&isolated_rows).map(|(&s, &iso)| if iso { 1.0 } else { s }).collect();
    let dv: Vec<f64> = col_sums.iter().zip(&isolated_cols).map(|(&s, &iso)| if iso { 1.0 } else { s }).collect();
    let matrix = DMatrix::from_fn(values.nrows(), values.ncols(), |i, j| values[(i, j)] / (du[i] * dv[j]).sqrt());
    Ok(NormalizedSimilarity { matrix, isolated_rows, isolated_cols })
}

/// Leading `k` singular triplets, values descending.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl TruncatedSvd {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (c, s) in self.sigma.iter().enumerate() {
            us.column_mut(c).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

const JACOBI_TOL: f64 = 1e-15;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Thin SVD of a tall matrix by one-sided (Hestenes) Jacobi rotations.
/// Returns `(U, σ, V)` with `U` `m×n`, `V` `n×n`, σ unsorted.
fn jacobi_svd_tall(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let mut work = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let (x, y) = (work[(i, p)], work[(i, q)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (work[(i, p)], work[(i, q)]);
                    work[(i, p)] = c * x - s * y;
                    work[(i, q)] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = (0..n).map(|j| work.column(j).norm()).collect();
    let scale = sigma.iter().copied().fold(0.0, f64::max);
    let mut u = DMatrix::zeros(m, n);
    let mut null = Vec::new();
    for j in 0..n {
        if sigma[j] > scale * 1e-14 && sigma[j] > 0.0 {
            u.set_column(j, &(work.column(j) / sigma[j]));
        } else {
            null.push(j);
        }
    }
    // Left vectors for (numerically) zero singular values: orthonormal completion.
    let mut basis = 0;
    for j in null {
        while basis < m {
            let mut cand = nalgebra::DVector::<f64>::zeros(m);
            cand[basis] = 1.0;
            basis += 1;
            for c in 0..n {
                let col = u.column(c);
                if col.norm() > 0.0 {
                    let d = col.dot(&cand);
                    cand -= col * d;
                }
            }
            let norm = cand.norm();
            if norm > 1e-8 {
                u.set_column(j, &(cand / norm));
                break;
            }
        }
    }
    (u, sigma, v)
}

/// Top-`k` SVD. Each left singular vector is signed so that its largest-magnitude
/// entry (first one on ties) is positive; the right vector flips with it.
pub fn svd_topk(m: &DMatrix<f64>, k: usize) -> Result<TruncatedSvd> {
    let (rows, cols) = m.shape();
    if k == 0 || k > rows.min(cols) {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={} for a {rows}×{cols} matrix", rows.min(cols))));
    }
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("svd input"));
    }
    let (u_full, values, v_full) = if rows >= cols {
        jacobi_svd_tall(m)
    } else {
        let (v, s, u) = jacobi_svd_tall(&m.transpose());
        (u, s, v)
    };

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let mut u = DMatrix::zeros(rows, k);
    let mut v = DMatrix::zeros(cols, k);
    let mut sigma = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let left = u_full.column(idx);
        let mut pivot = 0;
        for i in 0..rows {
            if left[i].abs() > left[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if left[pivot] < 0.0 { -1.0 } else { 1.0 };
        u.set_column(c, &(left * sign));
        v.set_column(c, &(v_full.column(idx) * sign));
        sigma.push(values[idx]);
    }
    Ok(TruncatedSvd { u, sigma, v })
}
