use std::fmt::Write as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::Network;
use crate::tensor::Tensor;

pub const DEFAULT_GUARD_DELTA: f64 = 0.02;
pub const DEFAULT_PRUNE_FRACTION: f64 = 0.05;

/// Fraction of `label` examples whose true-class logit is strictly the largest.
///
/// A tie is not a hit; otherwise all-zero logits would "classify" label 0.
fn strict_label_accuracy(net: &Network, inputs: &Tensor, label: usize) -> Result<f64> {
    let logits = net.logits(inputs)?;
    let hits = (0..logits.rows())
        .filter(|&r| {
            let row = logits.row(r);
            let target = row[label];
            row.iter().enumerate().all(|(j, &v)| j == label || v < target)
        })
        .count();
    Ok(hits as f64 / logits.rows() as f64)
}

/// Twice chance, capped halfway between chance and 1 so two-class tasks stay defined.
pub fn min_baseline(num_classes: usize) -> f64 {
    let chance = 1.0 / num_classes as f64;
    (2.0 * chance).min(0.5 * (1.0 + chance))
}

#[derive(Debug, Clone)]
pub struct CircuitOutcome {
    pub label: usize,
    /// Remaining non-zero weights over all weights.
    pub ecs: f64,
    pub baseline: f64,
    pub final_accuracy: f64,
    pub rounds: usize,
    pub pruned: Network,
}

/// Weight coordinates `(layer, offset)` sorted by ascending magnitude, zeros excluded.
fn prune_order(net: &Network) -> Vec<(usize, usize)> {
    let mut order: Vec<(f64, usize, usize)> = Vec::new();
    for l in net.param_layer_indices() {
        let w = net.layers[l].weight().expect("param layer");
        for (i, &x) in w.data().iter().enumerate() {
            if x != 0.0 {
                order.push((x.abs(), l, i));
            }
        }
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    order.into_iter().map(|(_, l, i)| (l, i)).collect()
}

fn set_weights(net: &mut Network, coords: &[(usize, usize)], values: impl Fn(usize) -> f64) {
    for (n, &(l, i)) in coords.iter().enumerate() {
        net.layers[l].weight_mut().expect("param layer").data_mut()[i] = values(n);
    }
}

/// Global magnitude pruning guarded by per-label accuracy.
///
/// Each round zeroes `prune_fraction` of the remaining non-zero weights. The first
/// round that breaks the guard is bisected for the largest passing prefix, then
/// pruning stops.
pub fn effective_circuit_size(
    net: &Network,
    ds: &Dataset,
    label: usize,
    guard_delta: f64,
    prune_fraction: f64,
) -> Result<CircuitOutcome> {
    if !(prune_fraction > 0.0 && prune_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("prune_fraction must be in (0, 1], got {prune_fraction}")));
    }
    if !(guard_delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("guard_delta must be non-negative, got {guard_delta}")));
    }
    if label >= ds.num_classes {
        return Err(Error::InvalidArgument(format!("label {label} outside {} classes", ds.num_classes)));
    }
    let idx = ds.indices_of_label(label);
    let min_baseline = min_baseline(ds.num_classes);
    if idx.is_empty() {
        return Err(Error::CircuitUndefined { label, baseline: 0.0 });
    }
    let inputs = ds.inputs.select_rows(&idx);
    let baseline = strict_label_accuracy(net, &inputs, label)?;
    if baseline < min_baseline {
        return Err(Error::CircuitUndefined { label, baseline });
    }
    let floor = baseline - guard_delta;

    let mut pruned = net.clone();
    let order = prune_order(net);
    let mut done = 0;
    let mut rounds = 0;
    let mut accuracy = baseline;
    while done < order.len() {
        let remaining = order.len() - done;
        let step = ((remaining as f64 * prune_fraction).ceil() as usize).clamp(1, remaining);
        let round = &order[done..done + step];
        let saved: Vec<f64> =
            round.iter().map(|&(l, i)| pruned.layers[l].weight().expect("param layer").data()[i]).collect();
        set_weights(&mut pruned, round, |_| 0.0);
        rounds += 1;
        let acc = strict_label_accuracy(&pruned, &inputs, label)?;
        if acc >= floor {
            done += step;
            accuracy = acc;
            continue;
        }
        // Largest passing prefix in [0, step): `lo` passes, `hi` fails.
        set_weights(&mut pruned, round, |n| saved[n]);
        let (mut lo, mut hi) = (0usize, step);
        let mut lo_acc = accuracy;
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            set_weights(&mut pruned, &round[..mid], |_| 0.0);
            let acc = strict_label_accuracy(&pruned, &inputs, label)?;
            set_weights(&mut pruned, &round[..mid], |n| saved[n]);
            if acc >= floor {
                lo = mid;
                lo_acc = acc;
            } else {
                hi = mid;
            }
        }
        set_weights(&mut pruned, &round[..lo], |_| 0.0);
        accuracy = lo_acc;
        break;
    }
    let ecs = pruned.num_nonzero_weights() as f64 / net.num_weights() as f64;
    Ok(CircuitOutcome { label, ecs, baseline, final_accuracy: accuracy, rounds, pruned })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelTag {
    Clustered,
    Unclustered,
}

impl ModelTag {
    pub fn name(self) -> &'static str {
        match self {
            ModelTag::Clustered => "clustered",
            ModelTag::Unclustered => "unclustered",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircuitReport {
    pub tag: ModelTag,
    pub labels: Vec<usize>,
    pub ecs: Vec<f64>,
    pub baseline: Vec<f64>,
    pub final_accuracy: Vec<f64>,
}

impl CircuitReport {
    pub fn mean_ecs(&self) -> f64 {
        self.ecs.iter().sum::<f64>() / self.ecs.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,label,ecs,baseline_accuracy,pruned_accuracy\n");
        for i in 0..self.labels.len() {
            writeln!(
                s,
                "{},{},{:.8},{:.6},{:.6}",
                self.tag.name(),
                self.labels[i],
                self.ecs[i],
                self.baseline[i],
                self.final_accuracy[i]
            )
            .unwrap();
        }
        s
    }
}

pub fn circuit_report(
    net: &Network,
    ds: &Dataset,
    labels: &[usize],
    guard_delta: f64,
    prune_fraction: f64,
    tag: ModelTag,
) -> Result<CircuitReport> {
    let mut report =
        CircuitReport { tag, labels: labels.to_vec(), ecs: vec![], baseline: vec![], final_accuracy: vec![] };
    for &label in labels {
        let out = effective_circuit_size(net, ds, label, guard_delta, prune_fraction)?;
        report.ecs.push(out.ecs);
        report.baseline.push(out.baseline);
        report.final_accuracy.push(out.final_accuracy);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcsComparison {
    pub labels: Vec<usize>,
    pub ecs_clustered: Vec<f64>,
    pub ecs_unclustered: Vec<f64>,
    pub percent_increase: Vec<f64>,
    pub mean_percent_increase: f64,
}

impl EcsComparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,ecs_clustered,ecs_unclustered,percent_increase\n");
        for i in 0..self.labels.len() {
            writeln!(
                s,
                "{},{:.8},{:.8},{:.4}",
                self.labels[i], self.ecs_clustered[i], self.ecs_unclustered[i], self.percent_increase[i]
            )
            .unwrap();
        }
        writeln!(s, "mean,,,{:.4}", self.mean_percent_increase).unwrap();
        s
    }
}

pub fn ecs_compare(clustered: &CircuitReport, unclustered: &CircuitReport) -> Result<EcsComparison> {
    if clustered.labels != unclustered.labels {
        return Err(Error::InvalidArgument("circuit reports cover different labels".into()));
    }
    if clustered.labels.is_empty() {
        return Err(Error::InvalidArgument("empty circuit reports".into()));
    }
    let mut percent_increase = Vec::with_capacity(clustered.labels.len());
    for (&c, &u) in clustered.ecs.iter().zip(&unclustered.ecs) {
        if !(c > 0.0) {
            return Err(Error::InvalidArgument(format!("clustered ecs {c} is not positive")));
        }
        percent_increase.push(100.0 * (u - c) / c);
    }
    let mean_percent_increase = percent_increase.iter().sum::<f64>() / percent_increase.len() as f64;
    Ok(EcsComparison {
        labels: clustered.labels.clone(),
        ecs_clustered: clustered.ecs.clone(),
        ecs_unclustered: unclustered.ecs.clone(),
        percent_increase,
        mean_percent_increase,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::synthetic_blobs_with_spread;
    use crate::net::{adam_step, AdamState, Architecture, Layer, Linear};

    fn report(tag: ModelTag, ecs: Vec<f64>) -> CircuitReport {
        let n = ecs.len();
        CircuitReport { tag, labels: (0..n).collect(), ecs, baseline: vec![1.0; n], final_accuracy: vec![1.0; n] }
    }

    #[test]
    fn compare_arithmetic() {
        let same = report(ModelTag::Clustered, vec![0.2, 0.3]);
        let cmp = ecs_compare(&same, &report(ModelTag::Unclustered, vec![0.2, 0.3])).unwrap();
        assert_eq!(cmp.percent_increase, vec![0.0, 0.0]);
        let cmp =
            ecs_compare(&report(ModelTag::Clustered, vec![0.10]), &report(ModelTag::Unclustered, vec![0.16])).unwrap();
        assert!((cmp.percent_increase[0] - 60.0).abs() < 1e-9);
        assert!((cmp.mean_percent_increase - 60.0).abs() < 1e-9);
    }

    /// One linear layer 6 → 2 fitted to two blobs.
    fn toy() -> (Network, Dataset) {
        let ds = synthetic_blobs_with_spread(5, 30, 2, 6, 0.15);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = (0..12).map(|_| rng.random_range(-0.3..0.3)).collect();
        let layer = Layer::Linear(Linear::new(Tensor::from_vec(&[2, 6], w).unwrap()));
        let mut net = Network::new(Architecture::Custom, vec![6], vec![layer]).unwrap();
        let mut adam = AdamState::new(&net, 0.05);
        for _ in 0..200 {
            let trace = net.forward(&ds.inputs).unwrap();
            net.backward(&trace, &ds.labels).unwrap();
            adam_step(&mut net, &mut adam);
        }
        (net, ds)
    }

    #[test]
    fn procedure_never_beats_exhaustive_minimum() {
        let (net, ds) = toy();
        let w0 = net.layers[0].weight().unwrap().clone();
        for label in 0..2 {
            let inputs = ds.inputs.select_rows(&ds.indices_of_label(label));
            let baseline = strict_label_accuracy(&net, &inputs, label).unwrap();
            for &delta in &[0.0, 0.02, 0.1, 0.3] {
                let mut best = 12;
                for mask in 0u32..(1 << 12) {
                    let mut trial = net.clone();
                    let w = trial.layers[0].weight_mut().unwrap();
                    for i in 0..12 {
                        w.data_mut()[i] = if mask >> i & 1 == 1 { w0.data()[i] } else { 0.0 };
                    }
                    if strict_label_accuracy(&trial, &inputs, label).unwrap() >= baseline - delta {
                        best = best.min(mask.count_ones() as usize);
                    }
                }
                let out = effective_circuit_size(&net, &ds, label, delta, 0.05).unwrap();
                let kept = (out.ecs * 12.0).round() as usize;
                assert!(kept >= best, "label {label} δ {delta}: kept {kept} < exhaustive {best}");
                assert!(out.final_accuracy >= out.baseline - delta);
            }
        }
    }

    #[test]
    fn pruned_network_respects_guard() {
        let (net, ds) = toy();
        for label in 0..2 {
            let out = effective_circuit_size(&net, &ds, label, 0.02, 0.05).unwrap();
            let inputs = ds.inputs.select_rows(&ds.indices_of_label(label));
            let acc = strict_label_accuracy(&out.pruned, &inputs, label).unwrap();
            assert_eq!(acc, out.final_accuracy);
            assert!(acc >= out.baseline - 0.02);
            assert!(out.ecs > 0.0 && out.ecs <= 1.0);
        }
    }

    #[test]
    fn no_guard_prunes_everything() {
        let (net, ds) = toy();
        let out = effective_circuit_size(&net, &ds, 1, 1.0, 0.05).unwrap();
        assert_eq!(out.ecs, 0.0);
    }

    #[test]
    fn guard_monotonicity() {
        let (net, ds) = toy();
        for label in 0..2 {
            let mut prev = f64::INFINITY;
            for &delta in &[0.0, 0.01, 0.05, 0.2, 0.5] {
                let ecs = effective_circuit_size(&net, &ds, label, delta, 0.05).unwrap().ecs;
                assert!(ecs <= prev, "δ {delta}: {ecs} > {prev}");
                prev = ecs;
            }
        }
    }

    #[test]
    fn already_zero_weights_never_count() {
        // 100 weights, 10 non-zero: 20 → 5 identity-ish readout on 5 one-hot features.
        let mut w = vec![0.0; 100];
        for c in 0..5 {
            w[c * 20 + c] = 1.0;
            w[c * 20 + 10 + c] = 0.5;
        }
        let layer = Layer::Linear(Linear::new(Tensor::from_vec(&[5, 20], w).unwrap()));
        let net = Network::new(Architecture::Custom, vec![20], vec![layer]).unwrap();
        let mut x = vec![0.0; 5 * 20];
        for c in 0..5 {
            x[c * 20 + c] = 1.0;
            x[c * 20 + 10 + c] = 1.0;
        }
        let ds = Dataset::new(Tensor::from_vec(&[5, 20], x).unwrap(), (0..5).collect(), 5).unwrap();
        for label in 0..5 {
            let out = effective_circuit_size(&net, &ds, label, 0.02, 0.05).unwrap();
            assert!(out.ecs <= 0.10 && out.ecs > 0.0, "{}", out.ecs);
        }
    }

    #[test]
    fn weak_baseline_is_undefined() {
        let layer = Layer::Linear(Linear::new(Tensor::zeros(&[2, 6])));
        let net = Network::new(Architecture::Custom, vec![6], vec![layer]).unwrap();
        let ds = synthetic_blobs_with_spread(5, 10, 2, 6, 0.15);
        assert!(matches!(
            effective_circuit_size(&net, &ds, 0, 0.02, 0.05),
            Err(Error::CircuitUndefined { label: 0, .. })
        ));
        let (net, ds) = toy();
        assert!(effective_circuit_size(&net, &ds, 0, 0.02, 0.0).is_err());
        assert!(effective_circuit_size(&net, &ds, 5, 0.02, 0.05).is_err());
    }
}
