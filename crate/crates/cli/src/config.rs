//! Layered run configuration: defaults < config file < environment < flags.
//!
//! The file is TOML. Flat keys configure the subcommand being run; a table
//! named after a subcommand (e.g. `[train-sup]`) overrides them for that
//! subcommand only, so one file can drive a whole pipeline. Environment
//! variables and flags both arrive through clap, which already ranks flags
//! above the environment.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::error::CliError;

pub const SUBCOMMANDS: [&str; 6] = ["train-unsup", "train-sup", "detect", "eval", "export-filters", "make-synthetic"];

/// Keys read before any subcommand runs.
pub const GLOBAL_KEYS: [&str; 1] = ["threads"];

pub fn read_file(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", path.display())))?;
    text.parse::<Table>().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Flat keys overlaid with the subcommand's own table.
fn file_layer(file: &Table, subcommand: &str) -> Result<Table, CliError> {
    let mut out = Table::new();
    for (k, v) in file {
        match v {
            Value::Table(_) if SUBCOMMANDS.contains(&k.as_str()) => {}
            Value::Table(_) => {
                return Err(CliError::Config(format!(
                    "config table [{k}] is not a subcommand; expected one of {}",
                    SUBCOMMANDS.join(", ")
                )))
            }
            _ if GLOBAL_KEYS.contains(&k.as_str()) => {}
            _ => {
                out.insert(k.clone(), v.clone());
            }
        }
    }
    if let Some(Value::Table(own)) = file.get(subcommand) {
        for (k, v) in own {
            out.insert(k.clone(), v.clone());
        }
    }
    Ok(out)
}

fn to_table<T: Serialize>(v: &T) -> Table {
    match Value::try_from(v) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("configs and argument structs serialize to tables"),
    }
}

/// Merges the layers and checks the result. Unknown keys and badly typed
/// values are configuration errors naming the key.
pub fn resolve<C, A>(subcommand: &str, file: Option<&Table>, args: &A) -> Result<C, CliError>
where
    C: Serialize + DeserializeOwned + Default,
    A: Serialize,
{
    let mut merged = to_table(&C::default());
    if let Some(file) = file {
        merged.extend(file_layer(file, subcommand)?);
    }
    merged.extend(to_table(args));
    Value::Table(merged)
        .try_into()
        .map_err(|e| CliError::Config(format!("{subcommand}: {}", e.to_string().trim())))
}

pub fn render<C: Serialize>(c: &C) -> String {
    toml::to_string(c).unwrap_or_else(|e| format!("<unprintable config: {e}>"))
}

/// Global thread count: flag or environment first, then the file.
pub fn threads(flag: Option<usize>, file: Option<&Table>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match file.and_then(|f| f.get("threads")) {
        None => Ok(None),
        Some(Value::Integer(n)) if *n > 0 => Ok(Some(*n as usize)),
        Some(v) => Err(CliError::Config(format!("threads must be a positive integer, got {v}"))),
    }
}

pub fn require_dir(path: &Path, what: &str) -> Result<PathBuf, CliError> {
    if path.is_dir() {
        Ok(path.to_path_buf())
    } else {
        Err(CliError::Data(format!("{what} directory {} does not exist", path.display())))
    }
}
