use std::fmt::Write as _;

use super::{classwise_accuracy, ClasswiseAccuracy};
use crate::bsgc::ClusterAssignment;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{BoundaryMask, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    /// Only `cluster` stays active; every other cluster is zero-ablated.
    On,
    /// Only `cluster` is zero-ablated.
    Off,
}

fn check_layer(net: &Network, assignment: &ClusterAssignment) -> Result<()> {
    let layer = net
        .linear(assignment.layer_index)
        .ok_or_else(|| Error::InvalidArgument(format!("layer {} is not linear", assignment.layer_index)))?;
    if layer.in_features() != assignment.m() || layer.out_features() != assignment.n() {
        return Err(Error::Shape(format!(
            "assignment {}×{} does not match layer {} ({} in, {} out)",
            assignment.m(),
            assignment.n(),
            assignment.layer_index,
            layer.in_features(),
            layer.out_features()
        )));
    }
    Ok(())
}

/// Masks on the clustered layer's input activations and on its outputs.
pub fn cluster_masks(
    net: &Network,
    assignment: &ClusterAssignment,
    cluster: usize,
    mode: AblationMode,
) -> Result<Vec<BoundaryMask>> {
    check_layer(net, assignment)?;
    if cluster >= assignment.k {
        return Err(Error::InvalidArgument(format!("cluster {cluster} outside 0..{}", assignment.k)));
    }
    let keep = |label: usize| match mode {
        AblationMode::On => label == cluster,
        AblationMode::Off => label != cluster,
    };
    Ok(vec![
        BoundaryMask { boundary: assignment.layer_index, keep: assignment.u_labels.iter().map(|&l| keep(l)).collect() },
        BoundaryMask {
            boundary: assignment.layer_index + 1,
            keep: assignment.v_labels.iter().map(|&l| keep(l)).collect(),
        },
    ])
}

/// Every clustered neuron zeroed at once.
pub fn full_ablation_masks(net: &Network, assignment: &ClusterAssignment) -> Result<Vec<BoundaryMask>> {
    check_layer(net, assignment)?;
    Ok(vec![
        BoundaryMask { boundary: assignment.layer_index, keep: vec![false; assignment.m()] },
        BoundaryMask { boundary: assignment.layer_index + 1, keep: vec![false; assignment.n()] },
    ])
}

pub fn ablate_forward(
    net: &Network,
    assignment: &ClusterAssignment,
    cluster: usize,
    mode: AblationMode,
    batch: &Tensor,
) -> Result<Tensor> {
    let masks = cluster_masks(net, assignment, cluster, mode)?;
    Ok(net.forward_masked(batch, &masks)?.into_logits())
}

/// Class-wise accuracy with each cluster switched on alone and switched off alone.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub baseline: Vec<f64>,
    /// `on[c][label]`
    pub on: Vec<Vec<f64>>,
    /// `off[c][label]`
    pub off: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

impl AblationReport {
    pub fn k(&self) -> usize {
        self.on.len()
    }

    pub fn num_classes(&self) -> usize {
        self.baseline.len()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,cluster");
        for l in 0..self.num_classes() {
            write!(s, ",label_{l}").unwrap();
        }
        s.push('\n');
        let mut row = |mode: &str, cluster: &str, values: &[f64]| {
            write!(s, "{mode},{cluster}").unwrap();
            for v in values {
                write!(s, ",{v:.6}").unwrap();
            }
            s.push('\n');
        };
        row("baseline", "-", &self.baseline);
        for (c, v) in self.on.iter().enumerate() {
            row("on", &c.to_string(), v);
        }
        for (c, v) in self.off.iter().enumerate() {
            row("off", &c.to_string(), v);
        }
        s
    }
}

pub fn ablation_report(net: &Network, assignment: &ClusterAssignment, ds: &Dataset) -> Result<AblationReport> {
    let ClasswiseAccuracy { accuracy: baseline, counts } = classwise_accuracy(net, ds, None)?;
    let mut on = Vec::with_capacity(assignment.k);
    let mut off = Vec::with_capacity(assignment.k);
    for c in 0..assignment.k {
        let masks = cluster_masks(net, assignment, c, AblationMode::On)?;
        on.push(classwise_accuracy(net, ds, Some(&masks))?.accuracy);
        let masks = cluster_masks(net, assignment, c, AblationMode::Off)?;
        off.push(classwise_accuracy(net, ds, Some(&masks))?.accuracy);
    }
    Ok(AblationReport { baseline, on, off, counts })
}
