//! MNIST (IDX) and CIFAR-10 (binary batch) loaders, plus seeded synthetic blobs.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;

/// Inputs scaled to [0, 1] with one class label per example.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Shape(format!("{} inputs but {} labels", inputs.rows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside {num_classes} classes")));
        }
        Ok(Dataset { inputs, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-example input extents.
    pub fn example_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// The first `n` examples (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn indices_of_label(&self, label: usize) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &l)| l == label).map(|(i, _)| i).collect()
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (self.inputs.select_rows(indices), indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn reshape_examples(self, shape: &[usize]) -> Result<Dataset> {
        let mut full = vec![self.len()];
        full.extend_from_slice(shape);
        Ok(Dataset { inputs: self.inputs.reshape(&full)?, labels: self.labels, num_classes: self.num_classes })
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(path, "truncated header"))
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;

    let magic = be_u32(&images, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(images_path, format!("wrong magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let n = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    let pixels = rows * cols;
    let payload = &images[16..];
    if payload.len() != n * pixels {
        return Err(Error::format(
            images_path,
            format!("truncated payload: header promises {} bytes, found {}", n * pixels, payload.len()),
        ));
    }

    let magic = be_u32(&labels, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(labels_path, format!("wrong magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n_labels = be_u32(&labels, 4, labels_path)? as usize;
    let label_bytes = &labels[8..];
    if label_bytes.len() != n_labels {
        return Err(Error::format(
            labels_path,
            format!("truncated payload: header promises {n_labels} labels, found {}", label_bytes.len()),
        ));
    }
    if n_labels != n {
        return Err(Error::format(labels_path, format!("count mismatch: {n} images but {n_labels} labels")));
    }

    let data = payload.iter().map(|&b| b as f64 / 255.0).collect();
    let inputs = Tensor::from_vec(&[n, pixels], data)?;
    let labels = label_bytes.iter().map(|&b| b as usize).collect();
    Dataset::new(inputs, labels, 10).map_err(|e| Error::format(labels_path, e.to_string()))
}

/// Standard file names inside an MNIST directory.
pub fn mnist_paths(dir: &Path, train: bool) -> (PathBuf, PathBuf) {
    let prefix = if train { "train" } else { "t10k" };
    (dir.join(format!("{prefix}-images-idx3-ubyte")), dir.join(format!("{prefix}-labels-idx1-ubyte")))
}

pub fn load_mnist_dir(dir: &Path, train: bool) -> Result<Dataset> {
    let (images, labels) = mnist_paths(dir, train);
    load_mnist_idx(&images, &labels)
}

/// Concatenates CIFAR-10 binary batch files into an `N×3×32×32` dataset.
pub fn load_cifar10_bin<P: AsRef<Path>>(batch_paths: &[P]) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        if bytes.len() % CIFAR_RECORD_BYTES != 0 {
            return Err(Error::format(
                path,
                format!("size {} is not a multiple of {CIFAR_RECORD_BYTES}", bytes.len()),
            ));
        }
        for (r, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
            let label = record[0] as usize;
            if label >= 10 {
                return Err(Error::format(path, format!("record {r}: label {label} is not below 10")));
            }
            labels.push(label);
            data.extend(record[1..].iter().map(|&b| b as f64 / 255.0));
        }
    }
    let n = labels.len();
    Dataset::new(Tensor::from_vec(&[n, 3, 32, 32], data)?, labels, 10)
}

/// Standard batch file names inside a `cifar-10-batches-bin` directory.
pub fn cifar10_paths(dir: &Path, train: bool) -> Vec<PathBuf> {
    if train {
        (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect()
    } else {
        vec![dir.join("test_batch.bin")]
    }
}

pub const DEFAULT_BLOB_SPREAD: f64 = 0.1;

/// Gaussian blobs around per-class means in [0.2, 0.8]^dim, clamped to [0, 1].
/// Examples are interleaved by class.
pub fn synthetic_blobs(seed: u64, n_per_class: usize, num_classes: usize, dim: usize) -> Dataset {
    synthetic_blobs_with_spread(seed, n_per_class, num_classes, dim, DEFAULT_BLOB_SPREAD)
}

pub fn synthetic_blobs_with_spread(
    seed: u64,
    n_per_class: usize,
    num_classes: usize,
    dim: usize,
    spread: f64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> =
        (0..num_classes).map(|_| (0..dim).map(|_| rng.random_range(0.2..0.8)).collect()).collect();
    let noise = Normal::new(0.0, spread).expect("finite spread");
    let n = n_per_class * num_classes;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n_per_class {
        for (c, mean) in means.iter().enumerate() {
            data.extend(mean.iter().map(|&m| (m + noise.sample(&mut rng)).clamp(0.0, 1.0)));
            labels.push(c);
        }
    }
    let inputs = Tensor::from_vec(&[n, dim], data).expect("consistent size");
    Dataset::new(inputs, labels, num_classes.max(1)).expect("labels in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        for v in [n, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(magic: u32, labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&magic.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn two_image_fixture_recovers_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..2 * 2 * 3).map(|i| (i * 20) as u8).collect();
        let img = write(dir.path(), "img", &idx_images(2, 2, 3, &pixels));
        let lab = write(dir.path(), "lab", &idx_labels(IDX_LABELS_MAGIC, &[3, 9]));
        let ds = load_mnist_idx(&img, &lab).unwrap();
        assert_eq!(ds.inputs.shape(), &[2, 6]);
        assert_eq!(ds.labels, vec![3, 9]);
        for (got, &b) in ds.inputs.data().iter().zip(&pixels) {
            assert_eq!(*got, b as f64 / 255.0);
        }
    }

    #[test]
    fn label_file_with_image_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(dir.path(), "img", &idx_images(1, 1, 1, &[0]));
        let lab = write(dir.path(), "lab", &idx_labels(IDX_IMAGES_MAGIC, &[0]));
        let err = load_mnist_idx(&img, &lab).unwrap_err();
        assert!(err.to_string().contains("wrong magic"), "{err}");
    }

    #[test]
    fn truncated_and_mismatched_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(dir.path(), "img", &idx_images(2, 2, 2, &[1, 2, 3]));
        let lab = write(dir.path(), "lab", &idx_labels(IDX_LABELS_MAGIC, &[0, 1]));
        assert!(load_mnist_idx(&img, &lab).unwrap_err().to_string().contains("truncated"));

        let img = write(dir.path(), "img2", &idx_images(2, 1, 1, &[1, 2]));
        let lab = write(dir.path(), "lab2", &idx_labels(IDX_LABELS_MAGIC, &[0, 1, 2]));
        assert!(load_mnist_idx(&img, &lab).unwrap_err().to_string().contains("count mismatch"));

        let img = write(dir.path(), "img3", &[0, 0]);
        assert!(load_mnist_idx(&img, &lab).is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_mnist_idx(Path::new("/nonexistent/imgs"), Path::new("/nonexistent/labs")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/imgs"));
    }

    #[test]
    fn cifar_single_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![7u8];
        rec.extend((0..3072).map(|i| (i % 256) as u8));
        let p = write(dir.path(), "b.bin", &rec);
        let ds = load_cifar10_bin(&[&p]).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels, vec![7]);
        assert_eq!(ds.inputs.shape(), &[1, 3, 32, 32]);
        assert_eq!(ds.inputs.data()[1024], (1024 % 256) as f64 / 255.0);
        assert!(ds.inputs.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn cifar_empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.bin", &[]);
        let ds = load_cifar10_bin(&[&p]).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.inputs.shape(), &[0, 3, 32, 32]);
    }

    #[test]
    fn cifar_bad_size_and_label() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "s.bin", &[0u8; 3072]);
        assert!(load_cifar10_bin(&[&p]).unwrap_err().to_string().contains("multiple of 3073"));
        let mut rec = vec![10u8];
        rec.extend(std::iter::repeat_n(0u8, 3072));
        let p = write(dir.path(), "l.bin", &rec);
        assert!(load_cifar10_bin(&[&p]).is_err());
    }

    #[test]
    fn blobs_are_deterministic_and_valid() {
        let a = synthetic_blobs(3, 5, 4, 10);
        let b = synthetic_blobs(3, 5, 4, 10);
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert_eq!(a.label_counts(), vec![5; 4]);
        assert!(a.inputs.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_ne!(a, synthetic_blobs(4, 5, 4, 10));
    }

    #[test]
    fn blobs_zero_per_class_is_empty() {
        let d = synthetic_blobs(1, 0, 3, 8);
        assert!(d.is_empty());
        assert_eq!(d.inputs.shape(), &[0, 8]);
    }

    #[test]
    fn official_mnist_header_when_present() {
        let dir = std::env::var_os("MODNET_MNIST_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
        let (img, lab) = mnist_paths(&dir, true);
        if !img.exists() || !lab.exists() {
            eprintln!("MNIST not found under {}; header check skipped", dir.display());
            return;
        }
        let ds = load_mnist_idx(&img, &lab).unwrap();
        assert_eq!(ds.inputs.shape(), &[60000, 784]);
    }
}
