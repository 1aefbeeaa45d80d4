//! Warmup training, clustering of one layer, then training with the enmeshment
//! penalty. Every artifact of a full run lands in one output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bsgc::{
    bsgc, gradient_similarity, layer_matrix, load_assignment, save_assignment, weight_similarity, ClusterAssignment,
    GradientAccumulator, SimilaritySource,
};
use crate::config::{DatasetKind, TrainConfig};
use crate::data::{cifar10_paths, load_cifar10_bin, load_mnist_dir, mnist_paths, synthetic_blobs_with_spread, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, ablation_report, circuit_report, ModelTag};
use crate::modularity::{clustered_layer_matrix, combined_loss, enmeshment, layer_enmeshment};
use crate::net::{adam_step, load_checkpoint, save_checkpoint, AdamState, Checkpoint, Network, NUM_CLASSES};
use crate::report::{
    accuracy_heatmap, accuracy_heatmap_svg, clustered_layer_image, clustered_layer_svg, sweep_csv, write_text,
};

pub const PHASE1_CHECKPOINT: &str = "phase1.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const ASSIGNMENT_FILE: &str = "assignment.txt";
pub const RUN_CSV: &str = "run.csv";

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

/// Every file the configured dataset needs, in load order.
pub fn dataset_files(cfg: &TrainConfig) -> Vec<PathBuf> {
    match cfg.dataset {
        DatasetKind::Mnist => {
            let (a, b) = mnist_paths(&cfg.data_dir, true);
            let (c, d) = mnist_paths(&cfg.data_dir, false);
            vec![a, b, c, d]
        }
        DatasetKind::Cifar10 => {
            let mut v = cifar10_paths(&cfg.data_dir, true);
            v.extend(cifar10_paths(&cfg.data_dir, false));
            v
        }
        DatasetKind::Synthetic => vec![],
    }
}

/// Fails with the first missing dataset file, before any work starts.
pub fn validate_dataset_paths(cfg: &TrainConfig) -> Result<()> {
    match dataset_files(cfg).into_iter().find(|p| !p.is_file()) {
        Some(missing) => Err(Error::MissingFile(missing)),
        None => Ok(()),
    }
}

pub fn load_splits(cfg: &TrainConfig) -> Result<Splits> {
    validate_dataset_paths(cfg)?;
    let shape = cfg
        .architecture
        .input_shape()
        .ok_or_else(|| Error::Config(format!("architecture {} has no fixed input", cfg.architecture.name())))?;
    let (train, test) = match cfg.dataset {
        DatasetKind::Mnist => (load_mnist_dir(&cfg.data_dir, true)?, load_mnist_dir(&cfg.data_dir, false)?),
        DatasetKind::Cifar10 => (
            load_cifar10_bin(&cifar10_paths(&cfg.data_dir, true))?,
            load_cifar10_bin(&cifar10_paths(&cfg.data_dir, false))?,
        ),
        DatasetKind::Synthetic => {
            // Same seed for both splits so they share class means; the test split
            // is the tail of a longer draw.
            let dim: usize = shape.iter().product();
            let per = cfg.synthetic_train_per_class + cfg.synthetic_test_per_class;
            let all = synthetic_blobs_with_spread(cfg.seed, per, NUM_CLASSES, dim, cfg.synthetic_spread);
            let cut = cfg.synthetic_train_per_class * NUM_CLASSES;
            let train_idx: Vec<usize> = (0..cut).collect();
            let test_idx: Vec<usize> = (cut..all.len()).collect();
            (all.subset(&train_idx), all.subset(&test_idx))
        }
    };
    let limit = |ds: Dataset, n: Option<usize>| match n {
        Some(n) if n < ds.len() => ds.head(n),
        _ => ds,
    };
    let train = limit(train, cfg.train_limit).reshape_examples(&shape)?;
    let test = limit(test, cfg.test_limit).reshape_examples(&shape)?;
    Ok(Splits { train, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Modular,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Modular => "modular",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based over the whole run.
    pub epoch: usize,
    pub phase: Phase,
    /// Mean of `L_CE + λ·L_E` over the epoch's batches.
    pub loss: f64,
    pub ce_loss: f64,
    pub test_accuracy: f64,
    /// Clustered-layer enmeshment after the epoch; absent before clustering.
    pub enmeshment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    pub warmup_epochs: usize,
    pub main_epochs: usize,
    pub initial_enmeshment: Option<f64>,
    pub final_checkpoint: Option<PathBuf>,
    pub assignment_path: Option<PathBuf>,
    /// Every file written by the run, in creation order.
    pub artifacts: Vec<PathBuf>,
}

impl RunRecord {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.test_accuracy)
    }

    pub fn final_enmeshment(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.enmeshment)
    }

    pub fn to_csv(&self) -> String {
        epochs_csv(&self.epochs)
    }

    pub fn summary(&self, cfg: &TrainConfig) -> String {
        let mut s = String::new();
        writeln!(s, "architecture: {}", cfg.architecture.name()).unwrap();
        writeln!(s, "dataset: {}", cfg.dataset.name()).unwrap();
        writeln!(s, "seed: {}", cfg.seed).unwrap();
        writeln!(s, "epochs: {} warmup + {} modular", self.warmup_epochs, self.main_epochs).unwrap();
        writeln!(s, "clusters: {}  lambda: {}  similarity: {}", cfg.k, cfg.lambda, cfg.similarity.name()).unwrap();
        if let Some(e) = self.initial_enmeshment {
            writeln!(s, "enmeshment at clustering: {e:.6}").unwrap();
        }
        if let Some(e) = self.final_enmeshment() {
            writeln!(s, "final enmeshment: {e:.6}").unwrap();
        }
        if let Some(a) = self.final_accuracy() {
            writeln!(s, "final test accuracy: {a:.6}").unwrap();
        }
        s
    }
}

pub fn epochs_csv(epochs: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,phase,loss,ce_loss,accuracy,E\n");
    for r in epochs {
        let e = r.enmeshment.map(|e| format!("{e:.8}")).unwrap_or_default();
        writeln!(s, "{},{},{:.8},{:.8},{:.6},{e}", r.epoch, r.phase.name(), r.loss, r.ce_loss, r.test_accuracy)
            .unwrap();
    }
    s
}

/// Reads back the rows written by [`epochs_csv`].
pub fn parse_epochs_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let bad = |line: &str| Error::Parse(format!("bad run row {line:?}"));
    let mut out = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(line));
        }
        let phase = match f[1] {
            "warmup" => Phase::Warmup,
            "modular" => Phase::Modular,
            _ => return Err(bad(line)),
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
        out.push(EpochRecord {
            epoch: f[0].parse().map_err(|_| bad(line))?,
            phase,
            loss: num(f[2])?,
            ce_loss: num(f[3])?,
            test_accuracy: num(f[4])?,
            enmeshment: if f[5].is_empty() { None } else { Some(num(f[5])?) },
        });
    }
    Ok(out)
}

/// Shuffle for a 0-based global epoch; depends only on the seed and the epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

struct EpochLoss {
    loss: f64,
    ce_loss: f64,
}

/// One pass over `train`. With an assignment the step includes `λ·L_E`;
/// with an accumulator the clustered layer's cross-entropy gradient is recorded.
fn train_epoch(
    net: &mut Network,
    adam: &mut AdamState,
    train: &Dataset,
    cfg: &TrainConfig,
    epoch: usize,
    assignment: Option<&ClusterAssignment>,
    mut accumulator: Option<(&mut GradientAccumulator, usize)>,
) -> Result<EpochLoss> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let order = epoch_order(cfg.seed, epoch, train.len());
    let (mut loss, mut ce, mut batches) = (0.0, 0.0, 0usize);
    for chunk in order.chunks(cfg.batch_size) {
        let (x, y) = train.batch(chunk);
        match assignment {
            Some(a) => {
                let b = combined_loss(net, &x, &y, a, cfg.lambda)?;
                loss += b.total;
                ce += b.l_ce;
            }
            None => {
                let trace = net.forward(&x)?;
                let l = net.backward(&trace, &y)?;
                loss += l;
                ce += l;
            }
        }
        if let Some((acc, layer)) = accumulator.as_mut() {
            acc.record(net.layers[*layer].grad().expect("linear layer"))?;
        }
        adam_step(net, adam);
        batches += 1;
    }
    Ok(EpochLoss { loss: loss / batches as f64, ce_loss: ce / batches as f64 })
}

/// Called after every epoch with its record and a checkpoint of the state reached.
pub type EpochHook<'a> = &'a mut dyn FnMut(&EpochRecord, &Checkpoint) -> Result<()>;

#[derive(Debug, Clone)]
pub struct Phase1 {
    pub checkpoint: Checkpoint,
    pub accumulator: GradientAccumulator,
    pub clustered_layer: usize,
    pub epochs: Vec<EpochRecord>,
}

impl Phase1 {
    pub fn network(&self) -> &Network {
        &self.checkpoint.network
    }
}

/// Plain cross-entropy warmup from a freshly initialized network.
pub fn run_phase1(cfg: &TrainConfig, splits: &Splits, hook: Option<EpochHook<'_>>) -> Result<Phase1> {
    cfg.validate()?;
    let mut net = Network::for_architecture(cfg.architecture, cfg.seed)?;
    let layer = cfg.clustered_layer.resolve(&net)?;
    let mut adam = AdamState::new(&net, cfg.learning_rate);
    let mut accumulator = GradientAccumulator::new(net.layers[layer].weight().expect("linear layer").shape());
    let mut epochs = Vec::with_capacity(cfg.warmup_epochs);
    let mut hook = hook;
    for epoch in 0..cfg.warmup_epochs {
        let l = train_epoch(&mut net, &mut adam, &splits.train, cfg, epoch, None, Some((&mut accumulator, layer)))?;
        let record = EpochRecord {
            epoch: epoch + 1,
            phase: Phase::Warmup,
            loss: l.loss,
            ce_loss: l.ce_loss,
            test_accuracy: accuracy(&net, &splits.test)?,
            enmeshment: None,
        };
        if let Some(h) = hook.as_mut() {
            let ckpt = Checkpoint { network: net.clone(), seed: cfg.seed, epochs_completed: epoch as u32 + 1, adam: Some(adam.clone()) };
            h(&record, &ckpt)?;
        }
        epochs.push(record);
    }
    let checkpoint =
        Checkpoint { network: net, seed: cfg.seed, epochs_completed: cfg.warmup_epochs as u32, adam: Some(adam) };
    Ok(Phase1 { checkpoint, accumulator, clustered_layer: layer, epochs })
}

/// Clusters the designated layer of a phase-1 network.
pub fn cluster_layer(
    net: &Network,
    layer: usize,
    accumulator: Option<&GradientAccumulator>,
    cfg: &TrainConfig,
) -> Result<ClusterAssignment> {
    let linear = net.linear(layer).ok_or_else(|| Error::Config(format!("layer {layer} is not linear")))?;
    let similarity = match cfg.similarity {
        SimilaritySource::Weight => weight_similarity(&layer_matrix(&linear.weight)),
        SimilaritySource::GradientAccum => {
            gradient_similarity(accumulator.ok_or(Error::EmptyAccumulator)?)?
        }
    };
    Ok(bsgc(&similarity, cfg.k, cfg.seed)?.with_layer(layer))
}

#[derive(Debug, Clone)]
pub struct Phase2 {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochRecord>,
}

/// Regularized training from `start` up to `warmup_epochs + main_epochs` total.
///
/// `start` may be the phase-1 checkpoint or any later phase-2 checkpoint; the
/// shuffle and optimizer state make the continuation match an uninterrupted run.
pub fn run_phase2(
    start: Checkpoint,
    assignment: &ClusterAssignment,
    cfg: &TrainConfig,
    splits: &Splits,
    hook: Option<EpochHook<'_>>,
) -> Result<Phase2> {
    cfg.validate()?;
    let done = start.epochs_completed as usize;
    if done < cfg.warmup_epochs || done > cfg.total_epochs() {
        return Err(Error::Config(format!(
            "checkpoint has {done} epochs; phase 2 spans epochs {}..{}",
            cfg.warmup_epochs,
            cfg.total_epochs()
        )));
    }
    let mut net = start.network;
    // Validates the assignment against the network before any step.
    layer_enmeshment(&net, assignment)?;
    let mut adam = match start.adam {
        Some(a) if a.matches(&net) => a,
        Some(_) => return Err(Error::Shape("optimizer state does not match network".into())),
        None => AdamState::new(&net, cfg.learning_rate),
    };
    let mut hook = hook;
    let mut epochs = Vec::new();
    for epoch in done..cfg.total_epochs() {
        let l = train_epoch(&mut net, &mut adam, &splits.train, cfg, epoch, Some(assignment), None)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            phase: Phase::Modular,
            loss: l.loss,
            ce_loss: l.ce_loss,
            test_accuracy: accuracy(&net, &splits.test)?,
            enmeshment: Some(layer_enmeshment(&net, assignment)?.e),
        };
        if let Some(h) = hook.as_mut() {
            let ckpt = Checkpoint { network: net.clone(), seed: cfg.seed, epochs_completed: epoch as u32 + 1, adam: Some(adam.clone()) };
            h(&record, &ckpt)?;
        }
        epochs.push(record);
    }
    let checkpoint = Checkpoint {
        network: net,
        seed: cfg.seed,
        epochs_completed: cfg.total_epochs().max(done) as u32,
        adam: Some(adam),
    };
    Ok(Phase2 { checkpoint, epochs })
}

/// Ablation, circuit sizes and figures for a trained network.
pub fn evaluate_into(
    net: &Network,
    assignment: &ClusterAssignment,
    test: &Dataset,
    cfg: &TrainConfig,
    tag: ModelTag,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<()> {
        let p = out.join(name);
        write_text(&p, text)?;
        written.push(p);
        Ok(())
    };
    let ablation = ablation_report(net, assignment, test)?;
    put("ablation.csv", &ablation.to_csv())?;
    put("ablation.svg", &accuracy_heatmap_svg(&ablation))?;
    let w = clustered_layer_matrix(net, assignment)?;
    put("enmeshment.csv", &enmeshment(&w, assignment)?.to_csv())?;
    put("clustered_layer.svg", &clustered_layer_svg(&w, assignment, 6)?)?;
    let labels: Vec<usize> = cfg.ecs_labels.clone().unwrap_or_else(|| (0..test.num_classes).collect());
    if !labels.is_empty() {
        let circuits = circuit_report(net, test, &labels, cfg.guard_delta, cfg.prune_fraction, tag)?;
        put("ecs.csv", &circuits.to_csv())?;
    }
    let heat = out.join("ablation.ppm");
    accuracy_heatmap(&ablation, 12).save_ppm(&heat)?;
    written.push(heat);
    let layer = out.join("clustered_layer.ppm");
    clustered_layer_image(&w, assignment, 6)?.image.save_ppm(&layer)?;
    written.push(layer);
    Ok(written)
}

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

/// Phase 1 → clustering → phase 2 → evaluation, writing every stage to `out`.
///
/// If `out` already holds a phase-1 checkpoint and an assignment, training
/// resumes from the latest checkpoint instead of starting over.
pub fn run_full(cfg: &TrainConfig, out: &Path) -> Result<RunRecord> {
    cfg.validate()?;
    validate_dataset_paths(cfg)?;
    create_dir(out)?;
    let splits = load_splits(cfg)?;
    let mut artifacts = Vec::new();
    let config_path = out.join("config.txt");
    write_text(&config_path, &cfg.to_text())?;
    artifacts.push(config_path);

    let phase1_path = out.join(PHASE1_CHECKPOINT);
    let assignment_path = out.join(ASSIGNMENT_FILE);
    let last_path = out.join(LAST_CHECKPOINT);
    let run_path = out.join(RUN_CSV);
    let resuming = phase1_path.is_file() && assignment_path.is_file();

    let mut epochs: Vec<EpochRecord>;
    let (assignment, start) = if resuming {
        let assignment = load_assignment(&assignment_path)?;
        let start = if last_path.is_file() { load_checkpoint(&last_path)? } else { load_checkpoint(&phase1_path)? };
        epochs = if run_path.is_file() {
            let text = std::fs::read_to_string(&run_path).map_err(|e| Error::io(&run_path, e))?;
            parse_epochs_csv(&text)?
        } else {
            vec![]
        };
        epochs.truncate(start.epochs_completed as usize);
        (assignment, start)
    } else {
        epochs = Vec::new();
        let mut hook = |r: &EpochRecord, _: &Checkpoint| -> Result<()> {
            epochs.push(r.clone());
            write_text(&run_path, &epochs_csv(&epochs))
        };
        let p1 = run_phase1(cfg, &splits, Some(&mut hook))?;
        save_checkpoint(&phase1_path, &p1.checkpoint)?;
        let assignment = cluster_layer(p1.network(), p1.clustered_layer, Some(&p1.accumulator), cfg)?;
        save_assignment(&assignment_path, &assignment)?;
        (assignment, p1.checkpoint)
    };
    artifacts.push(phase1_path);
    artifacts.push(assignment_path.clone());

    let initial = layer_enmeshment(&load_checkpoint(&out.join(PHASE1_CHECKPOINT))?.network, &assignment)?;
    let initial_path = out.join("enmeshment_initial.csv");
    write_text(&initial_path, &initial.to_csv())?;
    artifacts.push(initial_path);

    let mut hook = |r: &EpochRecord, ckpt: &Checkpoint| -> Result<()> {
        save_checkpoint(&last_path, ckpt)?;
        epochs.push(r.clone());
        write_text(&run_path, &epochs_csv(&epochs))
    };
    let p2 = run_phase2(start, &assignment, cfg, &splits, Some(&mut hook))?;
    let final_path = out.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_path, &p2.checkpoint)?;
    write_text(&run_path, &epochs_csv(&epochs))?;
    artifacts.push(final_path.clone());
    artifacts.push(run_path);
    if last_path.is_file() {
        artifacts.push(last_path);
    }

    if cfg.evaluate {
        let tag = if cfg.lambda > 0.0 { ModelTag::Clustered } else { ModelTag::Unclustered };
        artifacts.extend(evaluate_into(&p2.checkpoint.network, &assignment, &splits.test, cfg, tag, out)?);
    }
    let record = RunRecord {
        epochs,
        warmup_epochs: cfg.warmup_epochs,
        main_epochs: cfg.main_epochs,
        initial_enmeshment: Some(initial.e),
        final_checkpoint: Some(final_path),
        assignment_path: Some(assignment_path),
        artifacts: vec![],
    };
    let summary_path = out.join("summary.txt");
    write_text(&summary_path, &record.summary(cfg))?;
    artifacts.push(summary_path);
    Ok(RunRecord { artifacts, ..record })
}

/// Enmeshment of BSGC clusterings of one layer for each k.
pub fn sweep_k(net: &Network, layer: usize, ks: &[usize], seed: u64) -> Result<Vec<(usize, f64)>> {
    let w = layer_matrix(&net.linear(layer).ok_or_else(|| Error::Config(format!("layer {layer} is not linear")))?.weight);
    let similarity = weight_similarity(&w);
    ks.iter()
        .map(|&k| {
            let a = bsgc(&similarity, k, seed)?.with_layer(layer);
            Ok((k, enmeshment(&w, &a)?.e))
        })
        .collect()
}

/// `sweep_k` results as CSV text.
pub fn sweep_k_csv(net: &Network, layer: usize, ks: &[usize], seed: u64) -> Result<String> {
    Ok(sweep_csv(&sweep_k(net, layer, ks, seed)?))
}

/// Trains `plain_epochs` with plain cross-entropy (the sweep-k model).
pub fn train_plain(cfg: &TrainConfig, splits: &Splits) -> Result<Network> {
    let plain = TrainConfig { warmup_epochs: cfg.plain_epochs, main_epochs: 0, lambda: 0.0, ..cfg.clone() };
    Ok(run_phase1(&plain, splits, None)?.checkpoint.network)
}
