//! Enmeshment `E`: the share of a clustered layer's absolute weight mass that lies
//! inside matched cluster pairs. The training regularizer is `L_E = 1 − E`.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::bsgc::{layer_matrix, matrix_to_layer, ClusterAssignment};
use crate::error::{Error, Result};
use crate::net::{ActivationTrace, Network};
use crate::tensor::Tensor;

/// Below this total mass the layer is treated as all-zero.
pub const MIN_TOTAL_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EnmeshmentReport {
    /// Fraction of mass inside matched clusters, in [0, 1].
    pub e: f64,
    /// `mass[u][v]` = Σ|W_ij| over input cluster `u` and output cluster `v`.
    pub mass: Vec<Vec<f64>>,
    pub total_mass: f64,
}

impl EnmeshmentReport {
    pub fn to_csv(&self) -> String {
        let k = self.mass.len();
        let mut s = String::from("cluster");
        for v in 0..k {
            write!(s, ",v{v}").unwrap();
        }
        s.push('\n');
        for (u, row) in self.mass.iter().enumerate() {
            write!(s, "u{u}").unwrap();
            for m in row {
                write!(s, ",{m}").unwrap();
            }
            s.push('\n');
        }
        writeln!(s, "total_mass,{}", self.total_mass).unwrap();
        writeln!(s, "E,{}", self.e).unwrap();
        s
    }
}

fn check_shape(w: &DMatrix<f64>, a: &ClusterAssignment) -> Result<()> {
    if w.shape() != (a.m(), a.n()) {
        return Err(Error::Shape(format!(
            "weight matrix {}×{} does not match assignment {}×{}",
            w.nrows(),
            w.ncols(),
            a.m(),
            a.n()
        )));
    }
    Ok(())
}

/// Enmeshment of an input × output weight matrix under `assignment`, using |W|.
/// Sums run row-major over (i, j).
pub fn enmeshment(w: &DMatrix<f64>, assignment: &ClusterAssignment) -> Result<EnmeshmentReport> {
    check_shape(w, assignment)?;
    let k = assignment.k;
    let mut mass = vec![vec![0.0; k]; k];
    let mut inside = 0.0;
    let mut total = 0.0;
    for (i, &u) in assignment.u_labels.iter().enumerate() {
        for (j, &v) in assignment.v_labels.iter().enumerate() {
            let x = w[(i, j)].abs();
            mass[u][v] += x;
            total += x;
            if u == v {
                inside += x;
            }
        }
    }
    if !(total >= MIN_TOTAL_MASS) {
        return Err(Error::ZeroMass);
    }
    Ok(EnmeshmentReport { e: inside / total, mass, total_mass: total })
}

pub fn clustered_layer_matrix(net: &Network, assignment: &ClusterAssignment) -> Result<DMatrix<f64>> {
    let layer = net.linear(assignment.layer_index).ok_or_else(|| {
        Error::InvalidArgument(format!("layer {} is not a linear layer", assignment.layer_index))
    })?;
    let w = layer_matrix(&layer.weight);
    check_shape(&w, assignment)?;
    Ok(w)
}

pub fn layer_enmeshment(net: &Network, assignment: &ClusterAssignment) -> Result<EnmeshmentReport> {
    enmeshment(&clustered_layer_matrix(net, assignment)?, assignment)
}

/// `L_E = 1 − E` and `∂L_E/∂W_ij = sign(W_ij)·(E − 1[same cluster]) / Σ|W|`,
/// with zero subgradient at `W_ij = 0`.
pub fn enmeshment_loss(w: &DMatrix<f64>, assignment: &ClusterAssignment) -> Result<(f64, DMatrix<f64>)> {
    let report = enmeshment(w, assignment)?;
    let e = report.e;
    let total = report.total_mass;
    let grad = DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| {
        let x = w[(i, j)];
        if x == 0.0 {
            return 0.0;
        }
        let inside = if assignment.u_labels[i] == assignment.v_labels[j] { 1.0 } else { 0.0 };
        x.signum() * (e - inside) / total
    });
    Ok((1.0 - e, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_ce: f64,
    pub l_e: f64,
    pub lambda: f64,
    pub total: f64,
}

/// Adds `λ·∂L_E/∂W` into the clustered layer's gradient; returns `L_E`.
pub fn add_enmeshment_grad(net: &mut Network, assignment: &ClusterAssignment, lambda: f64) -> Result<f64> {
    let w = clustered_layer_matrix(net, assignment)?;
    let (l_e, grad) = enmeshment_loss(&w, assignment)?;
    if lambda != 0.0 {
        let grad: Tensor = matrix_to_layer(&grad);
        let layer = net.linear_mut(assignment.layer_index).expect("checked above");
        for (g, d) in layer.grad.data_mut().iter_mut().zip(grad.data()) {
            *g += lambda * d;
        }
    }
    Ok(l_e)
}

/// Forward + backward for `L_CE`, then the enmeshment term on the clustered layer.
pub fn combined_loss(
    net: &mut Network,
    batch: &Tensor,
    targets: &[usize],
    assignment: &ClusterAssignment,
    lambda: f64,
) -> Result<LossBreakdown> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {lambda}")));
    }
    let trace: ActivationTrace = net.forward(batch)?;
    let l_ce = net.backward(&trace, targets)?;
    let l_e = add_enmeshment_grad(net, assignment, lambda)?;
    Ok(LossBreakdown { l_ce, l_e, lambda, total: l_ce + lambda * l_e })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Direct transcription of the indicator sum, independent of the mass matrix.
    fn brute_force_e(w: &DMatrix<f64>, a: &ClusterAssignment) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                let inside = (0..a.k).any(|c| a.u_labels[i] == c && a.v_labels[j] == c);
                let x = w[(i, j)].abs();
                if inside {
                    num += x;
                }
                den += x;
            }
        }
        num / den
    }

    fn random_instance(seed: u64, m: usize, n: usize, k: usize) -> (DMatrix<f64>, ClusterAssignment) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let u = (0..m).map(|_| rng.random_range(0..k)).collect();
        let v = (0..n).map(|_| rng.random_range(0..k)).collect();
        (w, ClusterAssignment::new(k, u, v, 0).unwrap())
    }

    #[test]
    fn block_diagonal_is_fully_modular() {
        let w = DMatrix::from_row_slice(4, 4, &[
            1.0, -2.0, 0.0, 0.0, //
            0.5, 1.0, 0.0, 0.0, //
            0.0, 0.0, 3.0, 1.0, //
            0.0, 0.0, -1.0, 2.0,
        ]);
        let a = ClusterAssignment::new(2, vec![0, 0, 1, 1], vec![0, 0, 1, 1], 0).unwrap();
        let r = enmeshment(&w, &a).unwrap();
        assert_eq!(r.e, 1.0);
        let (l_e, _) = enmeshment_loss(&w, &a).unwrap();
        assert_eq!(l_e, 0.0);
    }

    #[test]
    fn all_ones_identity_assignment_is_half() {
        let w = DMatrix::from_element(2, 2, 1.0);
        let a = ClusterAssignment::new(2, vec![0, 1], vec![0, 1], 0).unwrap();
        let r = enmeshment(&w, &a).unwrap();
        assert_eq!(r.e, 0.5);
        assert_eq!(r.mass, vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(enmeshment_loss(&w, &a).unwrap().0, 0.5);
    }

    #[test]
    fn cross_only_is_zero() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -3.0, 0.0]);
        let a = ClusterAssignment::new(2, vec![0, 1], vec![0, 1], 0).unwrap();
        assert_eq!(enmeshment(&w, &a).unwrap().e, 0.0);
    }

    #[test]
    fn zero_layer_errors() {
        let w = DMatrix::zeros(3, 3);
        let a = ClusterAssignment::new(1, vec![0; 3], vec![0; 3], 0).unwrap();
        assert!(matches!(enmeshment(&w, &a), Err(Error::ZeroMass)));
        assert!(enmeshment_loss(&w, &a).is_err());
    }

    #[test]
    fn shape_mismatch_errors() {
        let w = DMatrix::from_element(3, 2, 1.0);
        let a = ClusterAssignment::new(1, vec![0; 2], vec![0; 2], 0).unwrap();
        assert!(matches!(enmeshment(&w, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let h = 1e-5;
        for seed in 0..5 {
            let (w, a) = random_instance(seed, 6, 6, 3);
            let (_, grad) = enmeshment_loss(&w, &a).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    if w[(i, j)].abs() < 1e-3 {
                        continue;
                    }
                    let mut p = w.clone();
                    p[(i, j)] += h;
                    let mut q = w.clone();
                    q[(i, j)] -= h;
                    let numeric = (enmeshment_loss(&p, &a).unwrap().0 - enmeshment_loss(&q, &a).unwrap().0) / (2.0 * h);
                    let rel = (grad[(i, j)] - numeric).abs() / grad[(i, j)].abs().max(numeric.abs()).max(1e-12);
                    assert!(rel < 1e-6, "seed {seed} ({i},{j}): {} vs {numeric}", grad[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn loss_only_descent_reaches_high_modularity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut w = DMatrix::from_fn(8, 8, |_, _| rng.random_range(-0.5..0.5));
        let a = ClusterAssignment::new(2, vec![0, 0, 0, 0, 1, 1, 1, 1], vec![1, 0, 1, 0, 1, 0, 1, 0], 0).unwrap();
        let e0 = enmeshment(&w, &a).unwrap().e;
        for _ in 0..500 {
            let (_, g) = enmeshment_loss(&w, &a).unwrap();
            w -= g * 0.1;
        }
        let e = enmeshment(&w, &a).unwrap().e;
        assert!(e > 0.99, "E went from {e0} to {e}");
    }

    #[test]
    fn combined_loss_lambda_behaviour() {
        let mut net = crate::net::Network::mlp_mnist(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_vec(&[4, 784], (0..4 * 784).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let y = [0, 1, 2, 3];
        let a = ClusterAssignment::new(4, (0..64).map(|i| i % 4).collect(), (0..64).map(|i| i / 16).collect(), 2)
            .unwrap();

        let mut plain = net.clone();
        let trace = plain.forward(&x).unwrap();
        let ce = plain.backward(&trace, &y).unwrap();

        let zero = combined_loss(&mut net, &x, &y, &a, 0.0).unwrap();
        assert_eq!(zero.total, zero.l_ce);
        assert_eq!(zero.l_ce, ce);
        assert_eq!(net, plain);

        let mut n1 = plain.clone();
        let mut n2 = plain.clone();
        let b1 = combined_loss(&mut n1, &x, &y, &a, 20.0).unwrap();
        let b2 = combined_loss(&mut n2, &x, &y, &a, 40.0).unwrap();
        assert!((2.0 * (b1.total - b1.l_ce) - (b2.total - b2.l_ce)).abs() < 1e-12);
        assert!((b1.total - (b1.l_ce + 20.0 * b1.l_e)).abs() < 1e-12);
        assert!(combined_loss(&mut n1, &x, &y, &a, -1.0).is_err());
    }

    #[test]
    fn combined_loss_on_block_diagonal_layer_is_pure_ce() {
        let mut net = crate::net::Network::mlp_mnist(8);
        let u: Vec<usize> = (0..64).map(|i| i / 16).collect();
        let a = ClusterAssignment::new(4, u.clone(), u, 2).unwrap();
        let layer = net.linear_mut(2).unwrap();
        for o in 0..64 {
            for i in 0..64 {
                if o / 16 != i / 16 {
                    layer.weight.data_mut()[o * 64 + i] = 0.0;
                }
            }
        }
        let x = Tensor::from_vec(&[2, 784], vec![0.5; 2 * 784]).unwrap();
        let b = combined_loss(&mut net, &x, &[1, 2], &a, 20.0).unwrap();
        assert_eq!(b.l_e, 0.0);
        assert_eq!(b.total, b.l_ce);
    }

    proptest! {
        #[test]
        fn matches_brute_force_exactly(seed in any::<u64>(), m in 1usize..17, n in 1usize..17, k in 1usize..5) {
            let (w, a) = random_instance(seed, m, n, k);
            let r = enmeshment(&w, &a).unwrap();
            prop_assert_eq!(r.e, brute_force_e(&w, &a));
            let mass_sum: f64 = r.mass.iter().flatten().sum();
            prop_assert!((mass_sum - r.total_mass).abs() < 1e-9);
            let (l_e, _) = enmeshment_loss(&w, &a).unwrap();
            prop_assert!((l_e + r.e - 1.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.e));
        }

        #[test]
        fn scale_invariant(seed in any::<u64>(), c in 0.001f64..1000.0) {
            let (w, a) = random_instance(seed, 7, 5, 3);
            let e1 = enmeshment(&w, &a).unwrap().e;
            let e2 = enmeshment(&(w * c), &a).unwrap().e;
            prop_assert!((e1 - e2).abs() < 1e-12);
        }
    }
}
