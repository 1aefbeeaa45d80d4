//! Read-only evaluation of trained networks: accuracy, cluster ablation, and
//! effective circuit size (ECS) by guarded magnitude pruning.

mod ablation;
mod circuit;

pub use ablation::{
    ablate_forward, ablation_report, cluster_masks, full_ablation_masks, AblationMode, AblationReport,
};
pub use circuit::{
    circuit_report, ecs_compare, effective_circuit_size, min_baseline, CircuitOutcome, CircuitReport, EcsComparison, ModelTag,
    DEFAULT_GUARD_DELTA, DEFAULT_PRUNE_FRACTION,
};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{argmax, BoundaryMask, Network};
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 1000;

/// Arg-max class of every row of `inputs`, evaluated in chunks.
pub fn predict(net: &Network, inputs: &Tensor, masks: &[BoundaryMask]) -> Result<Vec<usize>> {
    let n = inputs.rows();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let logits = net.forward_masked(&inputs.select_rows(&idx), masks)?.into_logits();
        out.extend((0..logits.rows()).map(|r| argmax(logits.row(r))));
        start = end;
    }
    Ok(out)
}

pub fn accuracy(net: &Network, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty dataset".into()));
    }
    let pred = predict(net, &ds.inputs, &[])?;
    let correct = pred.iter().zip(&ds.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Accuracy restricted to each true label. Labels without examples report 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ClasswiseAccuracy {
    pub accuracy: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn classwise_accuracy(net: &Network, ds: &Dataset, masks: Option<&[BoundaryMask]>) -> Result<ClasswiseAccuracy> {
    let pred = predict(net, &ds.inputs, masks.unwrap_or(&[]))?;
    Ok(classwise_from_predictions(&pred, &ds.labels, ds.num_classes))
}

pub fn classwise_from_predictions(pred: &[usize], labels: &[usize], num_classes: usize) -> ClasswiseAccuracy {
    let mut correct = vec![0usize; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (&p, &l) in pred.iter().zip(labels) {
        counts[l] += 1;
        if p == l {
            correct[l] += 1;
        }
    }
    let accuracy =
        correct.iter().zip(&counts).map(|(&c, &n)| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect();
    ClasswiseAccuracy { accuracy, counts }
}
