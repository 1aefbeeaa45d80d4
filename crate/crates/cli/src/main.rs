mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use modnet_core::bsgc::load_assignment;
use modnet_core::evaluation::{circuit_report, ecs_compare, ModelTag};
use modnet_core::modularity::{clustered_layer_matrix, layer_enmeshment};
use modnet_core::net::{load_checkpoint, save_checkpoint, Checkpoint};
use modnet_core::pipeline::{evaluate_into, load_splits, run_full, sweep_k_csv, train_plain};
use modnet_core::report::{clustered_layer_image, clustered_layer_svg, write_text};
use modnet_core::{Error, TrainConfig};

use crate::manifest::RunManifest;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "modnet", version, about = "Train, cluster and dissect modular networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Warmup, cluster, train with the enmeshment penalty, evaluate.
    Train(TrainArgs),
    /// Enmeshment of a plainly trained model for a list of cluster counts.
    SweepK(SweepArgs),
    /// Ablation and circuit-size reports for an existing checkpoint.
    Eval(EvalArgs),
    /// Render the clustered layer with rows and columns grouped by cluster.
    Visualize(VisualizeArgs),
}

#[derive(Args)]
struct Common {
    /// key = value config file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    /// Extra `key=value` config assignments, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Clusterability factor.
    #[arg(long)]
    lambda: Option<f64>,
    /// Number of clusters.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Cluster counts, e.g. `2..8` or `2,4,8`.
    #[arg(long = "k-list")]
    k_list: Option<String>,
    /// Analyse this checkpoint instead of training a plain model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    assignment: PathBuf,
    /// Restrict circuit sizes to these labels, e.g. `3,7`.
    #[arg(long)]
    labels: Option<String>,
    /// Unclustered checkpoint to compare circuit sizes against.
    #[arg(long)]
    control: Option<PathBuf>,
}

#[derive(Args)]
struct VisualizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    assignment: PathBuf,
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    /// Pixels per weight.
    #[arg(long, default_value_t = 6)]
    cell: usize,
}

fn build_config(common: &Common, extra: &[String]) -> Result<TrainConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.apply_overrides(extra)?;
    cfg.apply_overrides(&common.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn require(path: &Path) -> Result<(), Error> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(l) = args.lambda {
        extra.push(format!("clusterability_factor={l}"));
    }
    if let Some(k) = args.k {
        extra.push(format!("num_clusters={k}"));
    }
    let cfg = build_config(&args.common, &extra)?;
    let out = &args.common.out;
    let record = run_full(&cfg, out)?;
    let mut manifest = RunManifest::new("train", out, cfg.seed, cfg.to_text());
    manifest.artifacts = record.artifacts.clone();
    manifest.write()?;
    print!("{}", record.summary(&cfg));
    Ok(())
}

fn cmd_sweep_k(args: SweepArgs) -> Result<()> {
    let extra: Vec<String> = args.k_list.iter().map(|k| format!("sweep_k={k}")).collect();
    let cfg = build_config(&args.common, &extra)?;
    let out = &args.common.out;
    let mut manifest = RunManifest::new("sweep-k", out, cfg.seed, cfg.to_text());
    let net = match &args.checkpoint {
        Some(p) => {
            require(p)?;
            load_checkpoint(p)?.network
        }
        None => {
            modnet_core::pipeline::validate_dataset_paths(&cfg)?;
            create_out(out)?;
            let splits = load_splits(&cfg)?;
            let net = train_plain(&cfg, &splits)?;
            let path = out.join("plain.ckpt");
            let ckpt = Checkpoint { network: net.clone(), seed: cfg.seed, epochs_completed: cfg.plain_epochs as u32, adam: None };
            save_checkpoint(&path, &ckpt)?;
            manifest.artifacts.push(path);
            net
        }
    };
    create_out(out)?;
    let layer = cfg.clustered_layer.resolve(&net)?;
    let csv = sweep_k_csv(&net, layer, &cfg.sweep_k, cfg.seed)?;
    let path = out.join("sweep_k.csv");
    write_text(&path, &csv)?;
    manifest.artifacts.push(path);
    manifest.write()?;
    print!("{csv}");
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let extra: Vec<String> = args.labels.iter().map(|l| format!("ecs_labels={l}")).collect();
    let cfg = build_config(&args.common, &extra)?;
    require(&args.checkpoint)?;
    require(&args.assignment)?;
    let net = load_checkpoint(&args.checkpoint)?.network;
    let assignment = load_assignment(&args.assignment)?;
    layer_enmeshment(&net, &assignment)?;
    let splits = load_splits(&cfg)?;
    let out = &args.common.out;
    create_out(out)?;
    let mut manifest = RunManifest::new("eval", out, cfg.seed, cfg.to_text());
    manifest.artifacts = evaluate_into(&net, &assignment, &splits.test, &cfg, ModelTag::Clustered, out)?;
    if let Some(control) = &args.control {
        require(control)?;
        let control = load_checkpoint(control)?.network;
        let labels = cfg.ecs_labels.clone().unwrap_or_else(|| (0..splits.test.num_classes).collect());
        let ours = circuit_report(&net, &splits.test, &labels, cfg.guard_delta, cfg.prune_fraction, ModelTag::Clustered)?;
        let theirs =
            circuit_report(&control, &splits.test, &labels, cfg.guard_delta, cfg.prune_fraction, ModelTag::Unclustered)?;
        let path = out.join("ecs_compare.csv");
        write_text(&path, &ecs_compare(&ours, &theirs)?.to_csv())?;
        manifest.artifacts.push(path);
    }
    manifest.write()?;
    println!("wrote {} artifacts to {}", manifest.artifacts.len(), out.display());
    Ok(())
}

fn cmd_visualize(args: VisualizeArgs) -> Result<()> {
    require(&args.checkpoint)?;
    require(&args.assignment)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let assignment = load_assignment(&args.assignment)?;
    let w = clustered_layer_matrix(&ckpt.network, &assignment)?;
    let out = &args.out;
    create_out(out)?;
    let rendered = clustered_layer_image(&w, &assignment, args.cell)?;
    let ppm = out.join("clustered_layer.ppm");
    rendered.image.save_ppm(&ppm)?;
    let svg = out.join("clustered_layer.svg");
    write_text(&svg, &clustered_layer_svg(&w, &assignment, args.cell)?)?;
    let mut manifest = RunManifest::new("visualize", out, ckpt.seed, String::new());
    manifest.artifacts = vec![ppm, svg];
    manifest.write()?;
    println!("off-block fraction: {:.6}", rendered.off_block_fraction);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::SweepK(a) => cmd_sweep_k(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Visualize(a) => cmd_visualize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<Error>().is_some_and(Error::is_config);
            ExitCode::from(if config { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}
