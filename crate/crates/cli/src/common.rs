use std::fs;
use std::io::Write;
use std::path::Path;

use convpsd::checkpoint::Checkpoint;
use convpsd::detector::PyramidSpec;
use convpsd::network::{Network, NetworkSpec};
use convpsd::unsup::LayerParams;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Built-in network shapes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    Paper,
    #[default]
    Small,
    Tiny,
}

impl Arch {
    pub fn spec(self) -> NetworkSpec {
        match self {
            Arch::Paper => NetworkSpec::paper(),
            Arch::Small => NetworkSpec::small(),
            Arch::Tiny => NetworkSpec::tiny(),
        }
    }
}

pub fn pyramid_spec(up_ratio: f64, scale_stride: f64, min_scale_factor: f64) -> Result<PyramidSpec, CliError> {
    let p = PyramidSpec { up_ratio, scale_stride, min_scale_factor };
    p.validate()?;
    Ok(p)
}

pub fn create_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn write_lines(path: &Path, header: &str, lines: impl IntoIterator<Item = String>) -> Result<(), CliError> {
    create_parent(path)?;
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "{header}")?;
    for l in lines {
        writeln!(f, "{l}")?;
    }
    f.flush()?;
    Ok(())
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), CliError> {
    create_parent(path)?;
    ck.save(path)?;
    log::info!("wrote checkpoint {}", path.display());
    Ok(())
}

pub enum Model {
    Network(Box<Network>),
    Layer(Box<LayerParams>),
}

pub fn load_model(path: &Path) -> Result<Model, CliError> {
    let ck = Checkpoint::load(path)?;
    match ck.meta.get("model").and_then(|v| v.as_str()) {
        Some("convpsd-layer") => Ok(Model::Layer(Box::new(LayerParams::from_checkpoint(&ck)?))),
        _ => Ok(Model::Network(Box::new(Network::from_checkpoint(&ck)?))),
    }
}

pub fn load_network(path: &Path) -> Result<Network, CliError> {
    match load_model(path)? {
        Model::Network(n) => Ok(*n),
        Model::Layer(_) => Err(CliError::Data(format!("{} holds a single layer, not a network", path.display()))),
    }
}
