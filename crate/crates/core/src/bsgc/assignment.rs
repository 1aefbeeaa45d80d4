//! Cluster labels of one layer and their text form:
//!
//! ```text
//! # modnet cluster assignment v1
//! layer 2
//! k 4
//! u 0:1 1:3 2:0 ...
//! v 0:2 1:2 ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const HEADER: &str = "# modnet cluster assignment v1";

/// Labels for the input side (`u`) and output side (`v`) of the layer at
/// `layer_index`; input cluster `c` is paired with output cluster `c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub u_labels: Vec<usize>,
    pub v_labels: Vec<usize>,
    pub layer_index: usize,
}

impl ClusterAssignment {
    pub fn new(k: usize, u_labels: Vec<usize>, v_labels: Vec<usize>, layer_index: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if let Some(bad) = u_labels.iter().chain(&v_labels).find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!("label {bad} outside 0..{k}")));
        }
        Ok(ClusterAssignment { k, u_labels, v_labels, layer_index })
    }

    pub fn with_layer(mut self, layer_index: usize) -> Self {
        self.layer_index = layer_index;
        self
    }

    pub fn m(&self) -> usize {
        self.u_labels.len()
    }

    pub fn n(&self) -> usize {
        self.v_labels.len()
    }

    pub fn u_members(&self, cluster: usize) -> Vec<usize> {
        (0..self.m()).filter(|&i| self.u_labels[i] == cluster).collect()
    }

    pub fn v_members(&self, cluster: usize) -> Vec<usize> {
        (0..self.n()).filter(|&j| self.v_labels[j] == cluster).collect()
    }

    /// Cluster sizes as `(input side, output side)`.
    pub fn sizes(&self) -> Vec<(usize, usize)> {
        (0..self.k).map(|c| (self.u_members(c).len(), self.v_members(c).len())).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{HEADER}").unwrap();
        writeln!(s, "layer {}", self.layer_index).unwrap();
        writeln!(s, "k {}", self.k).unwrap();
        for (tag, labels) in [("u", &self.u_labels), ("v", &self.v_labels)] {
            s.push_str(tag);
            for (i, l) in labels.iter().enumerate() {
                write!(s, " {i}:{l}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some(HEADER) {
            return Err(Error::Parse(format!("missing header line {HEADER:?}")));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| Error::Parse(format!("missing `{name}` line")))?;
            line.strip_prefix(name)
                .filter(|rest| rest.is_empty() || rest.starts_with(' '))
                .map(|rest| rest.trim().to_string())
                .ok_or_else(|| Error::Parse(format!("expected `{name}` line, found {line:?}")))
        };
        let number = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Parse(format!("bad {what}: {s:?}")))
        };
        let layer_index = number(&field("layer")?, "layer index")?;
        let k = number(&field("k")?, "k")?;
        let mut side = |name: &str| -> Result<Vec<usize>> {
            let body = field(name)?;
            let mut labels = Vec::new();
            for (expected, pair) in body.split_whitespace().enumerate() {
                let (idx, label) =
                    pair.split_once(':').ok_or_else(|| Error::Parse(format!("bad pair {pair:?} on `{name}` line")))?;
                if number(idx, "neuron index")? != expected {
                    return Err(Error::Parse(format!("`{name}` line: neuron {idx} out of order")));
                }
                labels.push(number(label, "label")?);
            }
            Ok(labels)
        };
        let u = side("u")?;
        let v = side("v")?;
        ClusterAssignment::new(k, u, v, layer_index).map_err(|e| Error::Parse(e.to_string()))
    }
}

pub fn save_assignment(path: &Path, assignment: &ClusterAssignment) -> Result<()> {
    std::fs::write(path, assignment.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_assignment(path: &Path) -> Result<ClusterAssignment> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ClusterAssignment::from_text(&text).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn text_layout() {
        let a = ClusterAssignment::new(2, vec![0, 1, 1], vec![1, 0], 2).unwrap();
        assert_eq!(a.to_text(), format!("{HEADER}\nlayer 2\nk 2\nu 0:0 1:1 2:1\nv 0:1 1:0\n"));
    }

    #[test]
    fn rejects_out_of_range_and_garbage() {
        assert!(ClusterAssignment::new(2, vec![0, 2], vec![0], 0).is_err());
        assert!(ClusterAssignment::from_text("layer 1\n").is_err());
        let bad = format!("{HEADER}\nlayer 1\nk 2\nu 0:0 2:1\nv 0:1\n");
        assert!(ClusterAssignment::from_text(&bad).is_err());
        let bad = format!("{HEADER}\nlayer 1\nk 2\nu 0:0 1:5\nv 0:1\n");
        assert!(ClusterAssignment::from_text(&bad).is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip(k in 1usize..6, m in 0usize..20, n in 0usize..20, layer in 0usize..10, seed in any::<u64>()) {
            let u: Vec<usize> = (0..m).map(|i| (seed as usize).wrapping_add(i * 7) % k).collect();
            let v: Vec<usize> = (0..n).map(|j| (seed as usize).wrapping_add(j * 3 + 1) % k).collect();
            let a = ClusterAssignment::new(k, u, v, layer).unwrap();
            prop_assert_eq!(ClusterAssignment::from_text(&a.to_text()).unwrap(), a);
        }
    }
}
