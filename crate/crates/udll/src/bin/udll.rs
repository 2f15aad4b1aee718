//! Command-line driver for the clustering pipeline. Every stage reads and
//! writes files under one run directory, so runs are resumable and, for a
//! fixed seed, reproducible byte for byte.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use udll::data::{load_image_dir, save_binary};
use udll::pipeline::{
    stage_cluster, stage_eval, stage_export_embedding, stage_finetune, stage_graph, stage_pretrain,
    stage_run_all, DatasetFormat, RunConfig,
};
use udll::UdllError;

#[derive(Parser)]
#[command(
    name = "udll",
    version,
    about = "Deep local learning: autoencoder pretraining, prior-graph construction, self-expressive fine-tuning, spectral clustering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct CommonOpts {
    /// Flat `key = value` config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset path (.udlb file or PGM directory).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Dataset format: udlb or pgm-dir.
    #[arg(long)]
    format: Option<String>,
    /// Run directory for all stage artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed for init, coefficients, and k-means.
    #[arg(long)]
    seed: Option<u64>,
    /// Prior-graph neighbors per column.
    #[arg(long)]
    k: Option<usize>,
    /// Self-expressive fidelity weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Coefficient smoothness weight.
    #[arg(long)]
    beta: Option<f64>,
    /// Locality-preserving weight.
    #[arg(long)]
    gamma: Option<f64>,
    /// Epoch count for the stage being run (both stages for run-all).
    #[arg(long)]
    epochs: Option<usize>,
    /// Encoder layers as channels:kernel pairs, e.g. `15:3` or `5:5,3:3,3:3`.
    #[arg(long)]
    layers: Option<String>,
    /// Cluster count (default: the dataset's class count).
    #[arg(long)]
    clusters: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruction-only pretraining; writes checkpoint and loss curve.
    Pretrain(CommonOpts),
    /// Build the k-nearest-neighbor prior graph from checkpoint features.
    Graph {
        #[command(flatten)]
        common: CommonOpts,
        /// Checkpoint to encode with (default: <out>/pretrain.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fine-tune with the self-expressive layer against the frozen graph.
    Finetune {
        #[command(flatten)]
        common: CommonOpts,
        /// Starting checkpoint (default: <out>/pretrain.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Prior graph file (default: <out>/prior.graph).
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Spectral-cluster an exported coefficient matrix into labels.
    Cluster {
        #[command(flatten)]
        common: CommonOpts,
        /// Coefficient matrix file (default: <out>/w.wmat).
        #[arg(long)]
        w: Option<PathBuf>,
    },
    /// Score a labels file against the dataset ground truth.
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        /// Labels file, one integer per line (default: <out>/labels.txt).
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Export the latent matrix under a checkpoint as CSV.
    ExportEmbedding {
        #[command(flatten)]
        common: CommonOpts,
        /// Checkpoint to encode with (default: <out>/finetune.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the whole pipeline and report the final accuracy.
    RunAll(CommonOpts),
    /// Convert a PGM directory to the packed binary dataset format.
    Convert {
        /// Directory of `<class>_<index>.pgm` files.
        #[arg(long)]
        dataset: PathBuf,
        /// Output .udlb path.
        #[arg(long)]
        out: PathBuf,
        /// Optional downsampling target height.
        #[arg(long)]
        height: Option<usize>,
        /// Optional downsampling target width.
        #[arg(long)]
        width: Option<usize>,
    },
}

#[derive(Clone, Copy)]
enum Stage {
    Pretrain,
    Finetune,
    RunAll,
    Other,
}

fn resolve(common: &CommonOpts, stage: Stage) -> Result<RunConfig, UdllError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    if let Some(d) = &common.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(f) = &common.format {
        cfg.format = DatasetFormat::parse(f)?;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(k) = common.k {
        cfg.k = k;
    }
    if let Some(a) = common.alpha {
        cfg.alpha = a;
    }
    if let Some(b) = common.beta {
        cfg.beta = b;
    }
    if let Some(g) = common.gamma {
        cfg.gamma = g;
    }
    if let Some(l) = &common.layers {
        cfg.set("layers", l)?;
    }
    if let Some(c) = common.clusters {
        cfg.clusters = Some(c);
    }
    if let Some(e) = common.epochs {
        match stage {
            Stage::Pretrain => cfg.epochs_pretrain = e,
            Stage::Finetune => cfg.epochs_finetune = e,
            Stage::RunAll => {
                cfg.epochs_pretrain = e;
                cfg.epochs_finetune = e;
            }
            Stage::Other => {}
        }
    }
    Ok(cfg)
}

fn run() -> Result<(), UdllError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Pretrain(common) => {
            let cfg = resolve(&common, Stage::Pretrain)?;
            let ckpt = stage_pretrain(&cfg)?;
            println!("wrote {}", ckpt.display());
        }
        Command::Graph { common, checkpoint } => {
            let cfg = resolve(&common, Stage::Other)?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.pretrain_ckpt());
            let path = stage_graph(&cfg, &ckpt)?;
            println!("wrote {}", path.display());
        }
        Command::Finetune {
            common,
            checkpoint,
            graph,
        } => {
            let cfg = resolve(&common, Stage::Finetune)?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.pretrain_ckpt());
            let graph = graph.unwrap_or_else(|| cfg.graph_path());
            let path = stage_finetune(&cfg, &ckpt, &graph)?;
            println!("wrote {}", path.display());
        }
        Command::Cluster { common, w } => {
            let cfg = resolve(&common, Stage::Other)?;
            let w = w.unwrap_or_else(|| cfg.w_path());
            let path = stage_cluster(&cfg, &w)?;
            println!("wrote {}", path.display());
        }
        Command::Eval { common, labels } => {
            let cfg = resolve(&common, Stage::Other)?;
            let labels = labels.unwrap_or_else(|| cfg.labels_path());
            let acc = stage_eval(&cfg, &labels)?;
            println!("acc={acc:.2}");
        }
        Command::ExportEmbedding { common, checkpoint } => {
            let cfg = resolve(&common, Stage::Other)?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.finetune_ckpt());
            let path = stage_export_embedding(&cfg, &ckpt)?;
            println!("wrote {}", path.display());
        }
        Command::RunAll(common) => {
            let cfg = resolve(&common, Stage::RunAll)?;
            let acc = stage_run_all(&cfg)?;
            println!("acc={acc:.2}");
            println!("report: {}", cfg.report_path().display());
        }
        Command::Convert {
            dataset,
            out,
            height,
            width,
        } => {
            let mut ds = load_image_dir(&dataset, "pgm")?;
            if let (Some(h), Some(w)) = (height, width) {
                ds = udll::data::downsample_dataset(&ds, h, w)?;
            }
            save_binary(&ds, &out)?;
            println!(
                "wrote {} ({} samples, {}x{}, {} classes)",
                out.display(),
                ds.n(),
                ds.height(),
                ds.width(),
                ds.labels.class_count()
            );
        }
    }
    Ok(())
}

// exit codes: 0 success, 2 config, 3 data, 4 numerical, 5 i/o, 1 other
fn exit_code(err: &UdllError) -> u8 {
    match err {
        UdllError::Config(_) | UdllError::Param(_) => 2,
        UdllError::Data(_) | UdllError::Shape { .. } => 3,
        UdllError::Diverged { .. } | UdllError::NonFinite(_) | UdllError::NoConvergence { .. } => 4,
        UdllError::Io(_) => 5,
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
