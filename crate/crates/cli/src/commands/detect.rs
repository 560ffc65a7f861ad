use std::path::PathBuf;

use clap::Args;
use convpsd::detector::{detect_nms, write_detections, DetectConfig, Detection, Overlap, PyramidSpec, Scoring, NMS_THRESHOLD};
use serde::{Deserialize, Serialize};

use crate::common::{create_parent, load_network, pyramid_spec};
use crate::data::load_images;
use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapKey {
    #[default]
    Iou,
    Min,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringKey {
    /// One fully convolutional pass per pyramid level.
    #[default]
    Dense,
    /// One forward pass per window.
    Windowed,
}

/// Multi-scale sliding-window detection with suppression.
#[derive(Args, Debug, Serialize)]
pub struct DetectArgs {
    /// Trained network checkpoint
    #[arg(long, env = "CPSD_MODEL")]
    model: Option<PathBuf>,
    /// Image file or directory of images
    #[arg(long, env = "CPSD_IMAGES")]
    images: Option<PathBuf>,
    /// Detections CSV
    #[arg(long, env = "CPSD_OUT")]
    out: Option<PathBuf>,
    /// Keep windows scoring strictly above this
    #[arg(long, env = "CPSD_THRESHOLD")]
    threshold: Option<f64>,
    #[arg(long, env = "CPSD_NMS_THRESHOLD")]
    nms_threshold: Option<f64>,
    /// iou or min
    #[arg(long, env = "CPSD_OVERLAP")]
    overlap: Option<String>,
    /// dense or windowed
    #[arg(long, env = "CPSD_SCORING")]
    scoring: Option<String>,
    #[arg(long, env = "CPSD_PYRAMID_UP")]
    pyramid_up: Option<f64>,
    #[arg(long, env = "CPSD_PYRAMID_STRIDE")]
    pyramid_stride: Option<f64>,
    #[arg(long, env = "CPSD_PYRAMID_MIN")]
    pyramid_min: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectCmdConfig {
    pub model: PathBuf,
    pub images: PathBuf,
    pub out: PathBuf,
    pub threshold: f64,
    pub nms_threshold: f64,
    pub overlap: OverlapKey,
    pub scoring: ScoringKey,
    pub pyramid_up: f64,
    pub pyramid_stride: f64,
    pub pyramid_min: f64,
}

impl Default for DetectCmdConfig {
    fn default() -> Self {
        let p = PyramidSpec::default();
        DetectCmdConfig {
            model: "model.ckpt".into(),
            images: "data/test/images".into(),
            out: "detections.csv".into(),
            threshold: 0.5,
            nms_threshold: NMS_THRESHOLD,
            overlap: OverlapKey::Iou,
            scoring: ScoringKey::Dense,
            pyramid_up: p.up_ratio,
            pyramid_stride: p.scale_stride,
            pyramid_min: p.min_scale_factor,
        }
    }
}

pub fn run(cfg: &DetectCmdConfig) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&cfg.threshold) {
        return Err(CliError::Config(format!("threshold must be in [0, 1], got {}", cfg.threshold)));
    }
    let dcfg = DetectConfig {
        threshold: cfg.threshold,
        pyramid: pyramid_spec(cfg.pyramid_up, cfg.pyramid_stride, cfg.pyramid_min)?,
        nms_threshold: cfg.nms_threshold,
        overlap: match cfg.overlap {
            OverlapKey::Iou => Overlap::Iou,
            OverlapKey::Min => Overlap::Min,
        },
        scoring: match cfg.scoring {
            ScoringKey::Dense => Scoring::Dense,
            ScoringKey::Windowed => Scoring::Windowed,
        },
    };
    let net = load_network(&cfg.model)?;
    let images = load_images(&cfg.images)?;
    let mut dets = Vec::new();
    for (id, img) in &images {
        let boxes = detect_nms(&net, img, &dcfg)?;
        log::info!("{id}: {} detections", boxes.len());
        dets.extend(boxes.into_iter().map(|bbox| Detection { image_id: id.clone(), bbox }));
    }
    create_parent(&cfg.out)?;
    write_detections(std::fs::File::create(&cfg.out)?, &dets)?;
    log::info!("wrote {} detections for {} images to {}", dets.len(), images.len(), cfg.out.display());
    Ok(())
}
