//! Run configuration and the pipeline stages behind the CLI: every stage
//! reads and writes files under one run directory, so a run is resumable
//! from any point and reproducible bit for bit from its echoed config.

use crate::data::{downsample_dataset, load_binary, load_image_dir, ImageDataset};
use crate::error::UdllError;
use crate::graph::{build_prior_graph, PriorGraph};
use crate::metrics::{clustering_accuracy, LabelVector};
use crate::model::{
    self, finetune, load_checkpoint, pretrain, save_checkpoint, LayerSpec, LossBreakdown,
    ModelState, NetworkConfig,
};
use crate::spectral::{spectral_cluster, ClusterOptions};
use crate::tensor::Tensor;
use crate::Result;
use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const GRAPH_FORMAT_VERSION: u32 = 1;
pub const WMAT_FORMAT_VERSION: u32 = 1;

/// How the dataset file is stored on disk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    Udlb,
    PgmDir,
}

impl DatasetFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "udlb" => Ok(DatasetFormat::Udlb),
            "pgm-dir" | "pgm" => Ok(DatasetFormat::PgmDir),
            other => Err(UdllError::Config(format!(
                "unknown dataset format `{other}` (expected udlb or pgm-dir)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetFormat::Udlb => "udlb",
            DatasetFormat::PgmDir => "pgm-dir",
        }
    }
}

/// Fully resolved run configuration. Every field has either an explicit
/// value or the documented default; the resolved form is echoed into the
/// run directory.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub format: DatasetFormat,
    pub out_dir: PathBuf,
    pub layers: Vec<LayerSpec>,
    /// Target input size; datasets larger than this are downsampled.
    /// Defaults to the dataset's own size.
    pub input: Option<(usize, usize)>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Prior-graph neighbors per column.
    pub k: usize,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Cluster count; defaults to the dataset's class count.
    pub clusters: Option<usize>,
    pub top_q: usize,
    pub restarts: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::new(),
            format: DatasetFormat::Udlb,
            out_dir: PathBuf::from("run"),
            layers: Vec::new(),
            input: None,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            k: 3,
            epochs_pretrain: 200,
            epochs_finetune: 100,
            learning_rate: 0.001,
            seed: 0,
            clusters: None,
            top_q: 0,
            restarts: 10,
        }
    }
}

fn parse_layers(text: &str) -> Result<Vec<LayerSpec>> {
    text.split(',')
        .map(|tok| {
            let (c, s) = tok.split_once(':').ok_or_else(|| {
                UdllError::Config(format!("bad layer token `{tok}`, want channels:kernel"))
            })?;
            Ok(LayerSpec {
                channels: c
                    .parse()
                    .map_err(|_| UdllError::Config(format!("bad channel count `{c}`")))?,
                kernel_size: s
                    .parse()
                    .map_err(|_| UdllError::Config(format!("bad kernel size `{s}`")))?,
            })
        })
        .collect()
}

fn layers_to_string(layers: &[LayerSpec]) -> String {
    layers
        .iter()
        .map(|l| format!("{}:{}", l.channels, l.kernel_size))
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad_num = |k: &str, v: &str| UdllError::Config(format!("bad value `{v}` for `{k}`"));
        match key {
            "dataset" => self.dataset = PathBuf::from(value),
            "format" => self.format = DatasetFormat::parse(value)?,
            "out" => self.out_dir = PathBuf::from(value),
            "layers" => self.layers = parse_layers(value)?,
            "input_height" => {
                let h = value.parse().map_err(|_| bad_num(key, value))?;
                self.input = Some((h, self.input.map_or(h, |(_, w)| w)));
            }
            "input_width" => {
                let w = value.parse().map_err(|_| bad_num(key, value))?;
                self.input = Some((self.input.map_or(w, |(h, _)| h), w));
            }
            "alpha" => self.alpha = value.parse().map_err(|_| bad_num(key, value))?,
            "beta" => self.beta = value.parse().map_err(|_| bad_num(key, value))?,
            "gamma" => self.gamma = value.parse().map_err(|_| bad_num(key, value))?,
            "k" => self.k = value.parse().map_err(|_| bad_num(key, value))?,
            "epochs_pretrain" => {
                self.epochs_pretrain = value.parse().map_err(|_| bad_num(key, value))?
            }
            "epochs_finetune" => {
                self.epochs_finetune = value.parse().map_err(|_| bad_num(key, value))?
            }
            "learning_rate" => {
                self.learning_rate = value.parse().map_err(|_| bad_num(key, value))?
            }
            "seed" => self.seed = value.parse().map_err(|_| bad_num(key, value))?,
            "clusters" => self.clusters = Some(value.parse().map_err(|_| bad_num(key, value))?),
            "top_q" => self.top_q = value.parse().map_err(|_| bad_num(key, value))?,
            "restarts" => self.restarts = value.parse().map_err(|_| bad_num(key, value))?,
            other => return Err(UdllError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses the flat `key = value` config format. `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UdllError::Config(format!("cannot read {}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                UdllError::Config(format!(
                    "{}:{}: expected `key = value`, got `{raw}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() {
            return Err(UdllError::Config("no dataset path given".into()));
        }
        if self.layers.is_empty() {
            return Err(UdllError::Config(
                "no network layers given (want e.g. layers = 15:3)".into(),
            ));
        }
        if self.learning_rate <= 0.0 {
            return Err(UdllError::Config("learning rate must be positive".into()));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(UdllError::Config("loss weights must be nonnegative".into()));
        }
        if self.k < 1 {
            return Err(UdllError::Config("k must be >= 1".into()));
        }
        if self.epochs_pretrain < 1 || self.epochs_finetune < 1 {
            return Err(UdllError::Config("epoch counts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn hyper(&self) -> model::HyperParams {
        model::HyperParams {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            k: self.k,
            epochs_pretrain: self.epochs_pretrain,
            epochs_finetune: self.epochs_finetune,
            learning_rate: self.learning_rate,
            seed: self.seed,
        }
    }

    pub fn cluster_options(&self) -> ClusterOptions {
        ClusterOptions {
            top_q: self.top_q,
            restarts: self.restarts,
            ..ClusterOptions::default()
        }
    }

    /// Fully resolved `key = value` echo.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dataset = {}", self.dataset.display());
        let _ = writeln!(s, "format = {}", self.format.as_str());
        let _ = writeln!(s, "out = {}", self.out_dir.display());
        let _ = writeln!(s, "layers = {}", layers_to_string(&self.layers));
        if let Some((h, w)) = self.input {
            let _ = writeln!(s, "input_height = {h}");
            let _ = writeln!(s, "input_width = {w}");
        }
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "epochs_pretrain = {}", self.epochs_pretrain);
        let _ = writeln!(s, "epochs_finetune = {}", self.epochs_finetune);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(c) = self.clusters {
            let _ = writeln!(s, "clusters = {c}");
        }
        let _ = writeln!(s, "top_q = {}", self.top_q);
        let _ = writeln!(s, "restarts = {}", self.restarts);
        s
    }

    // default artifact locations inside the run directory
    pub fn meta_path(&self) -> PathBuf {
        self.out_dir.join("run.meta")
    }
    pub fn pretrain_ckpt(&self) -> PathBuf {
        self.out_dir.join("pretrain.ckpt")
    }
    pub fn pretrain_csv(&self) -> PathBuf {
        self.out_dir.join("pretrain_loss.csv")
    }
    pub fn graph_path(&self) -> PathBuf {
        self.out_dir.join("prior.graph")
    }
    pub fn finetune_ckpt(&self) -> PathBuf {
        self.out_dir.join("finetune.ckpt")
    }
    pub fn finetune_csv(&self) -> PathBuf {
        self.out_dir.join("finetune_loss.csv")
    }
    pub fn w_path(&self) -> PathBuf {
        self.out_dir.join("w.wmat")
    }
    pub fn labels_path(&self) -> PathBuf {
        self.out_dir.join("labels.txt")
    }
    pub fn metrics_path(&self) -> PathBuf {
        self.out_dir.join("metrics.txt")
    }
    pub fn embedding_path(&self) -> PathBuf {
        self.out_dir.join("embedding.csv")
    }
    pub fn report_path(&self) -> PathBuf {
        self.out_dir.join("report.txt")
    }
}

/// Loads the dataset, downsampling to the configured input size if needed,
/// and returns it with the concrete network architecture.
pub fn load_dataset(cfg: &RunConfig) -> Result<(ImageDataset, NetworkConfig)> {
    let mut ds = match cfg.format {
        DatasetFormat::Udlb => load_binary(&cfg.dataset)?,
        DatasetFormat::PgmDir => load_image_dir(&cfg.dataset, "pgm")?,
    };
    if let Some((th, tw)) = cfg.input {
        if (ds.height(), ds.width()) != (th, tw) {
            ds = downsample_dataset(&ds, th, tw)?;
        }
    }
    let network = NetworkConfig::new(cfg.layers.clone(), ds.height(), ds.width())?;
    Ok((ds, network))
}

fn write_meta(cfg: &RunConfig, ds: &ImageDataset, network: &NetworkConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut s = String::new();
    let _ = writeln!(s, "# resolved configuration");
    s.push_str(&cfg.echo());
    let _ = writeln!(s, "# formats");
    let _ = writeln!(s, "dataset_format_version = {DATASET_FORMAT_VERSION}");
    let _ = writeln!(s, "checkpoint_format_version = {CHECKPOINT_FORMAT_VERSION}");
    let _ = writeln!(s, "graph_format_version = {GRAPH_FORMAT_VERSION}");
    let _ = writeln!(s, "wmat_format_version = {WMAT_FORMAT_VERSION}");
    let _ = writeln!(s, "# model conventions");
    let _ = writeln!(s, "network = {}", network.echo());
    let _ = writeln!(s, "final_decoder_activation = linear");
    let _ = writeln!(s, "affinity_term = alpha * ||Z - ZW||^2_F (no 1/2 factor)");
    let _ = writeln!(
        s,
        "latent_flattening = per sample row-major (rows, columns, channels)"
    );
    let _ = writeln!(
        s,
        "kernel_init = uniform(-r, r), r = sqrt(6 / (fan_in + fan_out)); bias_init = 0.01"
    );
    let _ = writeln!(s, "# dataset");
    let _ = writeln!(s, "n = {}", ds.n());
    let _ = writeln!(s, "image_size = {}x{}", ds.height(), ds.width());
    let _ = writeln!(s, "class_count = {}", ds.labels.class_count());
    for note in &ds.provenance {
        let _ = writeln!(s, "provenance = {note}");
    }
    std::fs::write(cfg.meta_path(), s)?;
    Ok(())
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut s = String::with_capacity(rows.len() * 32 + header.len() + 1);
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Writes the coefficient matrix: magic `UDLL-WMAT`, u32 version, u32 n,
/// then `n*n` little-endian f64 row-major.
pub fn save_w(w: &Tensor, path: &Path) -> Result<()> {
    let n = w.rows();
    let mut bytes = Vec::with_capacity(9 + 8 + w.len() * 8);
    bytes.extend_from_slice(b"UDLL-WMAT");
    bytes.extend_from_slice(&WMAT_FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(n as u32).to_le_bytes());
    for &v in w.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_w(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 17 || &bytes[..9] != b"UDLL-WMAT" {
        return Err(UdllError::Data(format!(
            "{}: not a coefficient matrix file",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes"));
    if version != WMAT_FORMAT_VERSION {
        return Err(UdllError::Data(format!(
            "{}: unsupported coefficient file version {version}",
            path.display()
        )));
    }
    let n = u32::from_le_bytes(bytes[13..17].try_into().expect("4 bytes")) as usize;
    let expected = 17 + n * n * 8;
    if bytes.len() != expected {
        return Err(UdllError::Data(format!(
            "{}: expected {expected} bytes for n = {n}, got {}",
            path.display(),
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[17..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::from_vec(&[n, n], data)
}

fn check_checkpoint_matches(state: &ModelState, network: &NetworkConfig) -> Result<()> {
    if state.config != *network {
        return Err(UdllError::Config(format!(
            "checkpoint architecture `{}` does not match configured `{}`",
            state.config.echo(),
            network.echo()
        )));
    }
    Ok(())
}

/// Reconstruction-only training; writes the checkpoint and the loss curve.
pub fn stage_pretrain(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let (ds, network) = load_dataset(cfg)?;
    write_meta(cfg, &ds, &network)?;
    let state = pretrain(&ds.images, network, &cfg.hyper())?;
    save_checkpoint(&state, &cfg.pretrain_ckpt())?;
    let rows: Vec<String> = state
        .loss_history
        .iter()
        .enumerate()
        .map(|(e, b)| format!("{e},{}", b.reconstruction))
        .collect();
    write_csv(&cfg.pretrain_csv(), "epoch,reconstruction", &rows)?;
    Ok(cfg.pretrain_ckpt())
}

/// Encodes the dataset with checkpoint weights and writes the prior graph.
pub fn stage_graph(cfg: &RunConfig, checkpoint: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let (ds, network) = load_dataset(cfg)?;
    write_meta(cfg, &ds, &network)?;
    let state = load_checkpoint(checkpoint)?;
    check_checkpoint_matches(&state, &network)?;
    let z = state.encode(&ds.images)?;
    let graph = build_prior_graph(&z, cfg.k)?;
    graph.save(&cfg.graph_path())?;
    Ok(cfg.graph_path())
}

/// Fine-tunes from a pretrained checkpoint against a frozen prior graph;
/// writes the final checkpoint, the coefficient export, and the per-term
/// loss curve.
pub fn stage_finetune(cfg: &RunConfig, checkpoint: &Path, graph_path: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let (ds, network) = load_dataset(cfg)?;
    write_meta(cfg, &ds, &network)?;
    let mut state = load_checkpoint(checkpoint)?;
    check_checkpoint_matches(&state, &network)?;
    let graph = PriorGraph::load(graph_path)?;
    if graph.n != ds.n() {
        return Err(UdllError::Shape {
            op: "stage_finetune",
            detail: format!("graph covers {} samples, dataset has {}", graph.n, ds.n()),
        });
    }
    let pretrain_epochs = state.loss_history.len();
    finetune(&ds.images, &graph, &mut state, &cfg.hyper())?;
    save_checkpoint(&state, &cfg.finetune_ckpt())?;
    if let Some(w) = &state.selfexpr {
        save_w(&w.value, &cfg.w_path())?;
    } else {
        return Err(UdllError::Param(
            "fine-tuning with all loss weights zero leaves no coefficient matrix to export".into(),
        ));
    }
    let rows: Vec<String> = state.loss_history[pretrain_epochs..]
        .iter()
        .enumerate()
        .map(|(e, b): (usize, &LossBreakdown)| {
            format!(
                "{e},{},{},{},{},{}",
                b.reconstruction,
                b.affinity,
                b.regularizer,
                b.locality,
                b.total()
            )
        })
        .collect();
    write_csv(
        &cfg.finetune_csv(),
        "epoch,reconstruction,affinity,regularizer,locality,total",
        &rows,
    )?;
    Ok(cfg.finetune_ckpt())
}

/// Spectral clustering of an exported coefficient matrix; writes one label
/// per line in sample order.
pub fn stage_cluster(cfg: &RunConfig, w_path: &Path) -> Result<PathBuf> {
    let (ds, _network) = load_dataset(cfg)?;
    let w = load_w(w_path)?;
    let clusters = cfg.clusters.unwrap_or_else(|| ds.labels.class_count());
    if clusters < 2 {
        return Err(UdllError::Config(format!(
            "need at least 2 clusters, got {clusters}"
        )));
    }
    let labels = spectral_cluster(&w, clusters, cfg.cluster_options(), cfg.seed)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut text = String::new();
    for &l in labels.labels() {
        let _ = writeln!(text, "{l}");
    }
    std::fs::write(cfg.labels_path(), text)?;
    Ok(cfg.labels_path())
}

pub fn read_labels_file(path: &Path) -> Result<LabelVector> {
    let text = std::fs::read_to_string(path)?;
    let labels: Vec<usize> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| UdllError::Data(format!("bad label line `{l}` in {}", path.display())))
        })
        .collect::<Result<_>>()?;
    Ok(LabelVector::from_labels(labels))
}

/// Scores a labels file against the dataset's ground truth; returns the
/// accuracy and writes the metrics report.
pub fn stage_eval(cfg: &RunConfig, labels_path: &Path) -> Result<f64> {
    let (ds, _network) = load_dataset(cfg)?;
    let pred = read_labels_file(labels_path)?;
    if pred.len() != ds.n() {
        return Err(UdllError::Shape {
            op: "stage_eval",
            detail: format!("{} predictions for {} samples", pred.len(), ds.n()),
        });
    }
    let report = clustering_accuracy(&ds.labels, &pred)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let perm: Vec<String> = report.mapping.iter().map(|m| m.to_string()).collect();
    let text = format!("acc={:.2}\npermutation={}\n", report.acc, perm.join(","));
    std::fs::write(cfg.metrics_path(), &text)?;
    Ok(report.acc)
}

/// Exports the latent matrix of the dataset under a checkpoint as CSV with
/// one row per sample.
pub fn stage_export_embedding(cfg: &RunConfig, checkpoint: &Path) -> Result<PathBuf> {
    let (ds, network) = load_dataset(cfg)?;
    let state = load_checkpoint(checkpoint)?;
    check_checkpoint_matches(&state, &network)?;
    let z = state.encode(&ds.images)?;
    let dim = z.rows();
    let n = z.cols();
    std::fs::create_dir_all(&cfg.out_dir)?;
    let header: Vec<String> = (0..dim).map(|d| format!("z{d}")).collect();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = String::new();
        for d in 0..dim {
            if d > 0 {
                row.push(',');
            }
            let _ = write!(row, "{}", z.get2(d, i));
        }
        rows.push(row);
    }
    write_csv(&cfg.embedding_path(), &header.join(","), &rows)?;
    Ok(cfg.embedding_path())
}

/// The whole pipeline in sequence; returns the final accuracy and writes
/// `report.txt`.
pub fn stage_run_all(cfg: &RunConfig) -> Result<f64> {
    let ckpt = stage_pretrain(cfg)?;
    let graph = stage_graph(cfg, &ckpt)?;
    let final_ckpt = stage_finetune(cfg, &ckpt, &graph)?;
    stage_export_embedding(cfg, &final_ckpt)?;
    let labels = stage_cluster(cfg, &cfg.w_path())?;
    let acc = stage_eval(cfg, &labels)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "stages = pretrain, graph, finetune, export-embedding, cluster, eval"
    );
    let _ = writeln!(s, "acc = {acc:.2}");
    std::fs::write(cfg.report_path(), &s)?;
    Ok(acc)
}
