use std::path::PathBuf;

use clap::builder::BoolishValueParser;
use clap::Args;
use convpsd::dataset::{augment, split_windows, AugmentConfig, Label, SampleWindow, YuvImage};
use convpsd::detector::{mine_hard_negatives, MiningConfig, PyramidSpec, NMS_THRESHOLD};
use convpsd::network::{error_rate, finetune, Classifier, Network, TrainConfig};
use convpsd::synthetic::{clutter, two_class_windows};
use convpsd::transforms::LcnGradient;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::common::{load_network, pyramid_spec, save_checkpoint, write_lines, Arch};
use crate::data::{load_images, negative_windows, positive_windows};
use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupSource {
    #[default]
    Dataset,
    /// Synthetic windows; clutter images serve as negatives for mining.
    TwoClass,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LcnGradientKey {
    #[default]
    Frozen,
    Exact,
}

impl From<LcnGradientKey> for LcnGradient {
    fn from(k: LcnGradientKey) -> Self {
        match k {
            LcnGradientKey::Frozen => LcnGradient::FrozenDenominator,
            LcnGradientKey::Exact => LcnGradient::Exact,
        }
    }
}

/// Supervised fine-tuning with hard-negative bootstrapping.
#[derive(Args, Debug, Serialize)]
pub struct TrainSupArgs {
    /// dataset or two-class
    #[arg(long, env = "CPSD_SOURCE")]
    source: Option<String>,
    #[arg(long, env = "CPSD_DATA")]
    data: Option<PathBuf>,
    /// Architecture for a cold start: paper, small or tiny
    #[arg(long, env = "CPSD_ARCH")]
    arch: Option<String>,
    /// Pretrained network checkpoint
    #[arg(long, env = "CPSD_INIT")]
    init: Option<PathBuf>,
    /// Start from random filters instead of a checkpoint
    #[arg(long, env = "CPSD_COLD_START", num_args = 0..=1, default_missing_value = "true", value_parser = BoolishValueParser::new())]
    cold_start: Option<bool>,
    /// Feed pooled stage-1 maps to the classifier
    #[arg(long, env = "CPSD_MULTI_STAGE", num_args = 0..=1, default_missing_value = "true", value_parser = BoolishValueParser::new())]
    multi_stage: Option<bool>,
    #[arg(long, env = "CPSD_OUT")]
    out: Option<PathBuf>,
    /// Per-epoch loss CSV
    #[arg(long, env = "CPSD_REPORT")]
    report: Option<PathBuf>,
    #[arg(long, env = "CPSD_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "CPSD_EPOCHS")]
    epochs: Option<usize>,
    #[arg(long, env = "CPSD_LEARNING_RATE")]
    learning_rate: Option<f64>,
    #[arg(long, env = "CPSD_WEIGHT_DECAY")]
    weight_decay: Option<f64>,
    #[arg(long, env = "CPSD_BATCH_SIZE")]
    batch_size: Option<usize>,
    /// frozen or exact
    #[arg(long, env = "CPSD_LCN_GRADIENT")]
    lcn_gradient: Option<String>,
    /// Train only the classifier
    #[arg(long, env = "CPSD_CLASSIFIER_ONLY", num_args = 0..=1, default_missing_value = "true", value_parser = BoolishValueParser::new())]
    classifier_only: Option<bool>,
    #[arg(long, env = "CPSD_VAL_FRACTION")]
    val_fraction: Option<f64>,
    /// Mirror and deform every positive window
    #[arg(long, env = "CPSD_AUGMENT", num_args = 0..=1, default_missing_value = "true", value_parser = BoolishValueParser::new())]
    augment: Option<bool>,
    /// Two-class windows per class
    #[arg(long, env = "CPSD_SAMPLES")]
    samples: Option<usize>,
    #[arg(long, env = "CPSD_NEGATIVES_PER_IMAGE")]
    negatives_per_image: Option<usize>,
    /// Synthetic clutter images used for mining (source = two-class)
    #[arg(long, env = "CPSD_NEGATIVE_IMAGES")]
    negative_images: Option<usize>,
    #[arg(long, env = "CPSD_BOOTSTRAP_PASSES")]
    bootstrap_passes: Option<usize>,
    #[arg(long, env = "CPSD_MINE_PER_IMAGE")]
    mine_per_image: Option<usize>,
    #[arg(long, env = "CPSD_MINE_PER_PASS")]
    mine_per_pass: Option<usize>,
    #[arg(long, env = "CPSD_MINE_THRESHOLD")]
    mine_threshold: Option<f64>,
    #[arg(long, env = "CPSD_PYRAMID_UP")]
    pyramid_up: Option<f64>,
    #[arg(long, env = "CPSD_PYRAMID_STRIDE")]
    pyramid_stride: Option<f64>,
    #[arg(long, env = "CPSD_PYRAMID_MIN")]
    pyramid_min: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSupConfig {
    pub source: SupSource,
    pub data: PathBuf,
    pub arch: Arch,
    pub init: Option<PathBuf>,
    pub cold_start: bool,
    pub multi_stage: bool,
    pub out: PathBuf,
    pub report: PathBuf,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub lcn_gradient: LcnGradientKey,
    pub classifier_only: bool,
    pub val_fraction: f64,
    pub augment: bool,
    pub samples: usize,
    pub negatives_per_image: usize,
    pub negative_images: usize,
    pub bootstrap_passes: usize,
    pub mine_per_image: usize,
    pub mine_per_pass: usize,
    pub mine_threshold: f64,
    pub pyramid_up: f64,
    pub pyramid_stride: f64,
    pub pyramid_min: f64,
}

impl Default for TrainSupConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = MiningConfig::default();
        let p = PyramidSpec::default();
        TrainSupConfig {
            source: SupSource::Dataset,
            data: "data".into(),
            arch: Arch::Small,
            init: None,
            cold_start: false,
            multi_stage: true,
            out: "model.ckpt".into(),
            report: "train.csv".into(),
            seed: 0,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            lcn_gradient: LcnGradientKey::Frozen,
            classifier_only: t.classifier_only,
            val_fraction: 0.1,
            augment: true,
            samples: 150,
            negatives_per_image: 10,
            negative_images: 8,
            bootstrap_passes: 3,
            mine_per_image: m.per_image,
            mine_per_pass: m.per_pass,
            mine_threshold: m.threshold,
            pyramid_up: p.up_ratio,
            pyramid_stride: p.scale_stride,
            pyramid_min: p.min_scale_factor,
        }
    }
}

impl TrainSupConfig {
    fn pyramid(&self) -> Result<PyramidSpec, CliError> {
        pyramid_spec(self.pyramid_up, self.pyramid_stride, self.pyramid_min)
    }
}

pub const REPORT_HEADER: &str = "pass,epoch,mean_loss,train_windows,val_error";

fn initial_network(cfg: &TrainSupConfig) -> Result<Network, CliError> {
    let mut net = match (&cfg.init, cfg.cold_start) {
        (Some(_), true) => return Err(CliError::Config("give either init or cold_start, not both".into())),
        (None, false) => {
            return Err(CliError::Config("an unsupervised checkpoint (init) or cold_start = true is required".into()))
        }
        (Some(path), false) => {
            let net = load_network(path)?;
            log::info!("initialized from {} (architecture from the checkpoint)", path.display());
            net
        }
        (None, true) => Network::new(cfg.arch.spec(), cfg.seed)?,
    };
    net.spec.multi_stage = cfg.multi_stage;
    let dim = net.spec.geometry()?.classifier_dim;
    if net.classifier.weights.len() != dim {
        net.classifier = Classifier::zeros(dim);
    }
    Ok(net)
}

/// Training windows and the pedestrian-free images mined between passes.
fn training_data(cfg: &TrainSupConfig, net: &Network) -> Result<(Vec<SampleWindow>, Vec<(String, YuvImage)>), CliError> {
    let geom = net.spec.window;
    let augmentation = cfg.augment.then(AugmentConfig::default);
    match cfg.source {
        SupSource::Dataset => {
            let mut windows = positive_windows(&cfg.data.join("train"), &geom, augmentation.as_ref(), cfg.seed)?;
            let negatives = load_images(&cfg.data.join("negatives"))?;
            if negatives.is_empty() {
                return Err(CliError::Data(format!("no negative images under {}", cfg.data.join("negatives").display())));
            }
            windows.extend(negative_windows(&negatives, cfg.negatives_per_image, &geom, &cfg.pyramid()?, cfg.seed)?);
            Ok((windows, negatives))
        }
        SupSource::TwoClass => {
            let mut windows = two_class_windows(&geom, cfg.samples, cfg.seed)?;
            if let Some(a) = &augmentation {
                windows = windows
                    .iter()
                    .enumerate()
                    .flat_map(|(i, w)| match w.label {
                        Label::Pedestrian => augment(w, a, geom.uv_subsample, cfg.seed.wrapping_add(i as u64)),
                        Label::Background => vec![w.clone()],
                    })
                    .collect();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(7_777));
            let negatives = (0..cfg.negative_images)
                .map(|i| {
                    let img = clutter(3 * geom.rows, 4 * geom.cols, &mut rng);
                    (format!("clutter_{i:03}"), YuvImage::from_rgb(&img))
                })
                .collect();
            Ok((windows, negatives))
        }
    }
}

pub fn run(cfg: &TrainSupConfig) -> Result<(), CliError> {
    let train_cfg = TrainConfig {
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        weight_decay: cfg.weight_decay,
        seed: cfg.seed,
        batch_size: cfg.batch_size,
        lcn_gradient: cfg.lcn_gradient.into(),
        classifier_only: cfg.classifier_only,
    };
    train_cfg.validate()?;
    let mining = MiningConfig {
        threshold: cfg.mine_threshold,
        per_image: cfg.mine_per_image,
        per_pass: cfg.mine_per_pass,
        pyramid: cfg.pyramid()?,
        nms_threshold: NMS_THRESHOLD,
    };
    let mut net = initial_network(cfg)?;
    let (windows, negatives) = training_data(cfg, &net)?;
    let (mut train, val) = split_windows(&windows, cfg.val_fraction, cfg.seed)?;
    log::info!("{} training and {} validation windows, {} mining images", train.len(), val.len(), negatives.len());

    let mut lines = Vec::new();
    let mut passes_done = 0;
    for pass in 0..=cfg.bootstrap_passes {
        if pass > 0 {
            let mined = mine_hard_negatives(&net, &negatives, &mining)?;
            if mined.is_empty() {
                log::info!("pass {pass}: no windows above {} on negative images; stopping", cfg.mine_threshold);
                break;
            }
            log::info!("pass {pass}: mined {} hard negatives (top score {:.4})", mined.len(), mined[0].score);
            train.extend(mined.into_iter().map(|m| m.window));
            passes_done = pass;
        }
        let pass_cfg = TrainConfig { seed: cfg.seed.wrapping_add(pass as u64), ..train_cfg.clone() };
        let (trained, history) = finetune(net, &train, &pass_cfg)?;
        net = trained;
        let val_error = if val.is_empty() { f64::NAN } else { error_rate(&net, &val)? };
        log::info!("pass {pass}: {} windows, validation error {val_error:.4}", train.len());
        let n = history.epochs.len();
        for (i, loss) in history.epochs.iter().enumerate() {
            let v = if i + 1 == n { format!("{val_error:.6}") } else { String::new() };
            lines.push(format!("{pass},{},{loss:.9},{},{v}", i + 1, train.len()));
        }
    }
    write_lines(&cfg.report, REPORT_HEADER, lines)?;
    let stage = if passes_done == 0 { "finetuned".to_string() } else { format!("bootstrap-{passes_done}") };
    save_checkpoint(&net.to_checkpoint(&stage, cfg.seed), &cfg.out)
}
