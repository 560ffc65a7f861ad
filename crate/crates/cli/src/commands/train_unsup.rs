use std::path::PathBuf;

use clap::builder::BoolishValueParser;
use clap::Args;
use convpsd::dataset::{SampleWindow, WindowGeometry};
use convpsd::detector::PyramidSpec;
use convpsd::network::Network;
use convpsd::sparse_coding::ConnectionTable;
use convpsd::synthetic::{oriented_bars, two_class_windows};
use convpsd::unsup::{unsup_layer, LayerHyper, LayerParams, Pool, UnsupConfig, UnsupReport};
use serde::{Deserialize, Serialize};

use crate::common::{save_checkpoint, write_lines, Arch};
use crate::data::{load_images, negative_windows, positive_windows};
use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnsupSource {
    /// Annotated windows plus random negatives from a dataset directory.
    #[default]
    Dataset,
    /// Oriented bars; trains one stand-alone layer.
    Bars,
    /// Synthetic pedestrian and clutter windows.
    TwoClass,
}

/// Layer-wise unsupervised pretraining.
#[derive(Args, Debug, Serialize)]
pub struct TrainUnsupArgs {
    /// dataset, bars or two-class
    #[arg(long, env = "CPSD_SOURCE")]
    source: Option<String>,
    /// Dataset directory (source = dataset)
    #[arg(long, env = "CPSD_DATA")]
    data: Option<PathBuf>,
    /// paper, small or tiny
    #[arg(long, env = "CPSD_ARCH")]
    arch: Option<String>,
    /// Output checkpoint
    #[arg(long, env = "CPSD_OUT")]
    out: Option<PathBuf>,
    /// Per-epoch energy CSV
    #[arg(long, env = "CPSD_REPORT")]
    report: Option<PathBuf>,
    #[arg(long, env = "CPSD_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "CPSD_EPOCHS")]
    epochs: Option<usize>,
    /// Training windows (bars: images; two-class: per class; dataset: cap)
    #[arg(long, env = "CPSD_SAMPLES")]
    samples: Option<usize>,
    /// Random negatives per negative image (source = dataset)
    #[arg(long, env = "CPSD_NEGATIVES_PER_IMAGE")]
    negatives_per_image: Option<usize>,
    /// Sparsity weight for every layer
    #[arg(long, env = "CPSD_LAMBDA")]
    lambda: Option<f64>,
    /// Prediction-energy weight for every layer
    #[arg(long, env = "CPSD_BETA")]
    beta: Option<f64>,
    /// Learning rate for every layer (default: scaled per stage)
    #[arg(long, env = "CPSD_LEARNING_RATE")]
    learning_rate: Option<f64>,
    /// Decay the learning rate as 1/sqrt(epoch)
    #[arg(long, env = "CPSD_DECAY", num_args = 0..=1, default_missing_value = "true", value_parser = BoolishValueParser::new())]
    decay: Option<bool>,
    #[arg(long, env = "CPSD_FISTA_MAX_ITERS")]
    fista_max_iters: Option<usize>,
    #[arg(long, env = "CPSD_FISTA_TOL")]
    fista_tol: Option<f64>,
    /// Bars image side
    #[arg(long, env = "CPSD_BARS_SIZE")]
    bars_size: Option<usize>,
    /// Bars layer output maps
    #[arg(long, env = "CPSD_BARS_FILTERS")]
    bars_filters: Option<usize>,
    /// Bars layer kernel side
    #[arg(long, env = "CPSD_BARS_KERNEL")]
    bars_kernel: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainUnsupConfig {
    pub source: UnsupSource,
    pub data: PathBuf,
    pub arch: Arch,
    pub out: PathBuf,
    pub report: PathBuf,
    pub seed: u64,
    pub epochs: usize,
    pub samples: Option<usize>,
    pub negatives_per_image: usize,
    pub lambda: Option<f64>,
    pub beta: Option<f64>,
    pub learning_rate: Option<f64>,
    pub decay: bool,
    pub fista_max_iters: usize,
    pub fista_tol: f64,
    pub bars_size: usize,
    pub bars_filters: usize,
    pub bars_kernel: usize,
}

impl Default for TrainUnsupConfig {
    fn default() -> Self {
        let u = UnsupConfig::default();
        TrainUnsupConfig {
            source: UnsupSource::Dataset,
            data: "data".into(),
            arch: Arch::Small,
            out: "unsup.ckpt".into(),
            report: "unsup.csv".into(),
            seed: 0,
            epochs: u.epochs,
            samples: None,
            negatives_per_image: 10,
            lambda: None,
            beta: None,
            learning_rate: None,
            decay: u.decay,
            fista_max_iters: u.fista.max_iters,
            fista_tol: u.fista.tol,
            bars_size: 12,
            bars_filters: 4,
            bars_kernel: 5,
        }
    }
}

impl TrainUnsupConfig {
    fn unsup(&self) -> UnsupConfig {
        let mut u = UnsupConfig { epochs: self.epochs, seed: self.seed, decay: self.decay, ..Default::default() };
        u.fista.max_iters = self.fista_max_iters;
        u.fista.tol = self.fista_tol;
        u
    }

    fn override_hyper(&self, h: &mut LayerHyper) {
        if let Some(v) = self.lambda {
            h.lambda = v;
        }
        if let Some(v) = self.beta {
            h.beta = v;
        }
        if let Some(v) = self.learning_rate {
            h.learning_rate = v;
        }
    }
}

pub const REPORT_HEADER: &str = "layer,epoch,e_convsc,e_pred,e_cpsd,sparsity";

fn report_lines<'a>(layer: &'a str, r: &'a UnsupReport) -> impl Iterator<Item = String> + 'a {
    r.csv_lines().map(move |l| format!("{layer},{l}"))
}

pub fn run(cfg: &TrainUnsupConfig) -> Result<(), CliError> {
    let ucfg = cfg.unsup();
    ucfg.fista.validate()?;
    if cfg.source == UnsupSource::Bars {
        return run_bars(cfg, &ucfg);
    }
    let mut spec = cfg.arch.spec();
    for s in [&mut spec.y, &mut spec.uv, &mut spec.stage2] {
        cfg.override_hyper(&mut s.hyper);
    }
    let mut windows = match cfg.source {
        UnsupSource::TwoClass => two_class_windows(&spec.window, cfg.samples.unwrap_or(100).div_ceil(2), cfg.seed)?,
        _ => dataset_windows(cfg, &spec.window)?,
    };
    if let Some(n) = cfg.samples {
        windows.truncate(n);
    }
    log::info!("pretraining {:?} network on {} windows", cfg.arch, windows.len());
    let net = Network::new(spec, cfg.seed)?;
    let (net, reports) = net.pretrain(&windows, &ucfg)?;
    let mut lines = Vec::new();
    for (name, r) in ["y", "uv", "stage2"].iter().zip(&reports) {
        if let (Some(a), Some(b)) = (r.first(), r.last()) {
            log::info!("{name}: e_cpsd {:.6} -> {:.6}, sparsity {:.3}", a.e_cpsd, b.e_cpsd, b.sparsity);
        }
        lines.extend(report_lines(name, r));
    }
    write_lines(&cfg.report, REPORT_HEADER, lines)?;
    save_checkpoint(&net.to_checkpoint("unsup", cfg.seed), &cfg.out)
}

fn dataset_windows(cfg: &TrainUnsupConfig, geom: &WindowGeometry) -> Result<Vec<SampleWindow>, CliError> {
    let mut w = positive_windows(&cfg.data.join("train"), geom, None, cfg.seed)?;
    let negatives = load_images(&cfg.data.join("negatives"))?;
    let pyramid = PyramidSpec::default();
    w.extend(negative_windows(&negatives, cfg.negatives_per_image, geom, &pyramid, cfg.seed)?);
    Ok(w)
}

fn run_bars(cfg: &TrainUnsupConfig, ucfg: &UnsupConfig) -> Result<(), CliError> {
    let mut hyper = LayerHyper::default();
    cfg.override_hyper(&mut hyper);
    let table = ConnectionTable::full(1, cfg.bars_filters);
    let layer = LayerParams::init(table, cfg.bars_kernel, hyper, Pool::NONE, cfg.seed)?;
    let samples = oriented_bars(cfg.samples.unwrap_or(50), cfg.bars_size, cfg.seed);
    let (layer, report) = unsup_layer(&samples, layer, ucfg)?;
    if let (Some(a), Some(b)) = (report.first(), report.last()) {
        log::info!("bars layer: e_cpsd {:.6} -> {:.6}, sparsity {:.3}", a.e_cpsd, b.e_cpsd, b.sparsity);
    }
    write_lines(&cfg.report, REPORT_HEADER, report_lines("layer", &report))?;
    save_checkpoint(&layer.to_checkpoint("unsup", cfg.seed), &cfg.out)
}
