use std::path::PathBuf;

use clap::Args;
use convpsd::dataset::save_gray_png;
use convpsd::unsup::{export_filters, FilterBank};
use convpsd::Plane;
use serde::{Deserialize, Serialize};

use crate::common::{create_parent, load_model, Model};
use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKey {
    #[default]
    Y,
    Uv,
    Stage2,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BankKey {
    #[default]
    Dictionary,
    Predictor,
}

/// Writes a layer's filters as a tiled grayscale PNG.
#[derive(Args, Debug, Serialize)]
pub struct ExportArgs {
    /// Network or layer checkpoint
    #[arg(long, env = "CPSD_MODEL")]
    model: Option<PathBuf>,
    /// y, uv or stage2 (network checkpoints only)
    #[arg(long, env = "CPSD_LAYER")]
    layer: Option<String>,
    /// dictionary or predictor
    #[arg(long, env = "CPSD_BANK")]
    bank: Option<String>,
    #[arg(long, env = "CPSD_OUT")]
    out: Option<PathBuf>,
    /// Pixels between tiles
    #[arg(long, env = "CPSD_PAD")]
    pad: Option<usize>,
    /// Nearest-neighbour magnification
    #[arg(long, env = "CPSD_ZOOM")]
    zoom: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportConfig {
    pub model: PathBuf,
    pub layer: LayerKey,
    pub bank: BankKey,
    pub out: PathBuf,
    pub pad: usize,
    pub zoom: usize,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig {
            model: "model.ckpt".into(),
            layer: LayerKey::Y,
            bank: BankKey::Dictionary,
            out: "filters.png".into(),
            pad: 1,
            zoom: 4,
        }
    }
}

fn magnify(p: &Plane, z: usize) -> Plane {
    Plane::from_fn(p.rows() * z, p.cols() * z, |r, c| p[(r / z, c / z)])
}

pub fn run(cfg: &ExportConfig) -> Result<(), CliError> {
    if cfg.zoom == 0 {
        return Err(CliError::Config("zoom must be at least 1".into()));
    }
    let bank = match cfg.bank {
        BankKey::Dictionary => FilterBank::Dictionary,
        BankKey::Predictor => FilterBank::Predictor,
    };
    let grid = match load_model(&cfg.model)? {
        Model::Layer(layer) => export_filters(&layer, bank, cfg.pad),
        Model::Network(net) => {
            let layer = match cfg.layer {
                LayerKey::Y => &net.y,
                LayerKey::Uv => &net.uv,
                LayerKey::Stage2 => &net.stage2,
            };
            export_filters(layer, bank, cfg.pad)
        }
    };
    create_parent(&cfg.out)?;
    save_gray_png(&magnify(&grid, cfg.zoom), &cfg.out)?;
    log::info!("wrote {}x{} filter image {}", grid.cols() * cfg.zoom, grid.rows() * cfg.zoom, cfg.out.display());
    Ok(())
}
