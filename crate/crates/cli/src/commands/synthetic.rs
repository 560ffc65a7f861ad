use std::path::PathBuf;

use clap::Args;
use convpsd::synthetic::write_fixture;
use serde::{Deserialize, Serialize};

use crate::common::Arch;
use crate::error::CliError;

/// Writes a small synthetic detection dataset.
#[derive(Args, Debug, Serialize)]
pub struct SyntheticArgs {
    /// Output dataset directory
    #[arg(long, env = "CPSD_OUT")]
    out: Option<PathBuf>,
    /// Images per split
    #[arg(long, env = "CPSD_IMAGES")]
    images: Option<usize>,
    #[arg(long, env = "CPSD_SEED")]
    seed: Option<u64>,
    /// Window geometry to size pedestrians for: paper, small or tiny
    #[arg(long, env = "CPSD_ARCH")]
    arch: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub out: PathBuf,
    pub images: usize,
    pub seed: u64,
    pub arch: Arch,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { out: "data".into(), images: 10, seed: 0, arch: Arch::Small }
    }
}

pub fn run(cfg: &SyntheticConfig) -> Result<(), CliError> {
    write_fixture(&cfg.out, &cfg.arch.spec().window, cfg.images, cfg.seed)?;
    log::info!("wrote synthetic dataset to {}", cfg.out.display());
    Ok(())
}
