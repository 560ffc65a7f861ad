use std::path::PathBuf;

use clap::Args;
use convpsd::detector::read_detections;
use convpsd::evaluation::{apply_measure, assemble, det_svg, evaluate, load_annotation_dir, MeasureFilter, MATCH_OVERLAP, REPORT_HEADER};
use serde::{Deserialize, Serialize};

use crate::common::write_lines;
use crate::config::require_dir;
use crate::error::CliError;

pub const MEASURES: [&str; 5] = ["reasonable", "all", "large", "near", "medium"];

/// DET curves and AUC summaries of a detections file.
#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    /// Detections CSV
    #[arg(long, env = "CPSD_DETECTIONS")]
    detections: Option<PathBuf>,
    /// Directory of per-image annotation files
    #[arg(long, env = "CPSD_ANNOTATIONS")]
    annotations: Option<PathBuf>,
    /// Directory for report.csv and one SVG per measure
    #[arg(long, env = "CPSD_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Comma-separated subset of reasonable, all, large, near, medium
    #[arg(long, env = "CPSD_MEASURES", value_delimiter = ',')]
    measures: Option<Vec<String>>,
    /// Minimum IoU for a match
    #[arg(long, env = "CPSD_OVERLAP")]
    overlap: Option<f64>,
    /// Dataset name in the report
    #[arg(long, env = "CPSD_DATASET")]
    dataset: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub detections: PathBuf,
    pub annotations: PathBuf,
    pub out_dir: PathBuf,
    pub measures: Vec<String>,
    pub overlap: f64,
    pub dataset: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            detections: "detections.csv".into(),
            annotations: "data/test/annotations".into(),
            out_dir: "eval".into(),
            measures: MEASURES.iter().map(|s| s.to_string()).collect(),
            overlap: MATCH_OVERLAP,
            dataset: "test".into(),
        }
    }
}

pub fn run(cfg: &EvalConfig) -> Result<(), CliError> {
    let filters = cfg
        .measures
        .iter()
        .map(|m| {
            MeasureFilter::preset(m)
                .ok_or_else(|| CliError::Config(format!("unknown measure {m:?}; expected one of {}", MEASURES.join(", "))))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if !(cfg.overlap > 0.0 && cfg.overlap <= 1.0) {
        return Err(CliError::Config(format!("overlap must be in (0, 1], got {}", cfg.overlap)));
    }
    let file = std::fs::File::open(&cfg.detections)
        .map_err(|e| CliError::Data(format!("detections {}: {e}", cfg.detections.display())))?;
    let dets = read_detections(std::io::BufReader::new(file))?;
    let annos = load_annotation_dir(&require_dir(&cfg.annotations, "annotation")?)?;
    let images = assemble(&dets, &annos)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut rows = Vec::new();
    for f in &filters {
        let positives: usize = images.iter().map(|i| apply_measure(&i.annotations, f).iter().filter(|a| !a.ignore).count()).sum();
        if positives == 0 {
            log::warn!("measure {}: no annotation qualifies; skipped", f.name);
            continue;
        }
        let (curve, row) = evaluate(&images, f, &cfg.dataset, cfg.overlap)?;
        std::fs::write(cfg.out_dir.join(format!("{}.svg", f.name)), det_svg(&curve, &row))?;
        println!("{}", row.csv());
        rows.push(row.csv());
    }
    if rows.is_empty() {
        return Err(CliError::Data("no requested measure has a qualifying annotation".into()));
    }
    write_lines(&cfg.out_dir.join("report.csv"), REPORT_HEADER, rows)?;
    log::info!("wrote {}", cfg.out_dir.join("report.csv").display());
    Ok(())
}
