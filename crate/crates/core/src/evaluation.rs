//! Matching detections to ground truth, DET curves (miss rate against
//! false positives per image) and their area summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{iou, score_order, BoundingBox, Detection};
use crate::error::{Error, Result};

pub const MATCH_OVERLAP: f64 = 0.5;

/// FPPI values sampled by the legacy nine-point summary.
pub const REFERENCE_FPPI: [f64; 9] = [0.01, 0.0178, 0.0316, 0.0562, 0.1, 0.1778, 0.3162, 0.5623, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Occlusion {
    None,
    Partial,
    Heavy,
}

impl Occlusion {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Occlusion::None),
            1 => Some(Occlusion::Partial),
            2 => Some(Occlusion::Heavy),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub bbox: BoundingBox,
    pub ignore: bool,
    pub occlusion: Occlusion,
}

impl Annotation {
    pub fn new(bbox: BoundingBox) -> Self {
        Annotation { bbox, ignore: false, occlusion: Occlusion::None }
    }

    pub fn ignored(bbox: BoundingBox) -> Self {
        Annotation { bbox, ignore: true, occlusion: Occlusion::None }
    }
}

/// Parses `left top width height ignore occlusion` lines; blank lines and
/// `#` comments are skipped.
pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::Data(format!("annotation line {}: {what}: {line:?}", n + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let bbox = BoundingBox::new(num(fields[0])?, num(fields[1])?, num(fields[2])?, num(fields[3])?, 0.0);
        if !bbox.is_valid() {
            return Err(bad("box must have positive size"));
        }
        let ignore = match fields[4] {
            "0" => false,
            "1" => true,
            _ => return Err(bad("ignore flag must be 0 or 1")),
        };
        let occlusion = fields[5]
            .parse::<u8>()
            .ok()
            .and_then(Occlusion::from_code)
            .ok_or_else(|| bad("occlusion must be 0, 1 or 2"))?;
        out.push(Annotation { bbox, ignore, occlusion });
    }
    Ok(out)
}

pub fn format_annotations(annos: &[Annotation]) -> String {
    let mut s = String::new();
    for a in annos {
        let b = &a.bbox;
        let _ = writeln!(s, "{} {} {} {} {} {}", b.left, b.top, b.width, b.height, a.ignore as u8, a.occlusion.code());
    }
    s
}

/// Every `*.txt` file of a directory, keyed by file stem.
pub fn load_annotation_dir(dir: &Path) -> Result<BTreeMap<String, Vec<Annotation>>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let text = std::fs::read_to_string(&path)?;
        let annos = parse_annotations(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        out.insert(crate::dataset::image_id(&path), annos);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchLabel {
    TruePositive,
    FalsePositive,
    /// Absorbed by an ignore region: neither true nor false positive.
    Ignored,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matching {
    /// One label per detection, in input order.
    pub labels: Vec<MatchLabel>,
    /// Which annotations were matched; always false for ignore regions.
    pub hits: Vec<bool>,
}

/// Greedy matching in descending score order (earlier index on ties).
/// A detection takes the unmatched regular annotation of highest overlap
/// at least `overlap`; failing that it is absorbed by any ignore region
/// reaching `overlap`; otherwise it is a false positive.
pub fn match_detections(dets: &[BoundingBox], annos: &[Annotation], overlap: f64) -> Matching {
    let mut labels = vec![MatchLabel::FalsePositive; dets.len()];
    let mut hits = vec![false; annos.len()];
    for d in score_order(dets.iter().map(|d| d.score)) {
        let mut best: Option<(usize, f64)> = None;
        for (a, anno) in annos.iter().enumerate() {
            if anno.ignore || hits[a] {
                continue;
            }
            let o = iou(&dets[d], &anno.bbox);
            if o >= overlap && best.is_none_or(|(_, b)| o > b) {
                best = Some((a, o));
            }
        }
        if let Some((a, _)) = best {
            hits[a] = true;
            labels[d] = MatchLabel::TruePositive;
        } else if annos.iter().any(|a| a.ignore && iou(&dets[d], &a.bbox) >= overlap) {
            labels[d] = MatchLabel::Ignored;
        }
    }
    Matching { labels, hits }
}

/// Detections and ground truth of one image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageEval {
    pub image_id: String,
    pub detections: Vec<BoundingBox>,
    pub annotations: Vec<Annotation>,
}

/// Groups detections by image. Every annotated image is included; a
/// detection for an image without annotations is an error.
pub fn assemble(dets: &[Detection], annos: &BTreeMap<String, Vec<Annotation>>) -> Result<Vec<ImageEval>> {
    let mut images: BTreeMap<String, ImageEval> = annos
        .iter()
        .map(|(id, a)| (id.clone(), ImageEval { image_id: id.clone(), detections: Vec::new(), annotations: a.clone() }))
        .collect();
    let mut unknown = Vec::new();
    for d in dets {
        match images.get_mut(&d.image_id) {
            Some(img) => img.detections.push(d.bbox),
            None => {
                if !unknown.contains(&d.image_id) {
                    unknown.push(d.image_id.clone());
                }
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::Data(format!("detections for images without annotations: {}", unknown.join(", "))));
    }
    Ok(images.into_values().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub fppi: f64,
    pub miss_rate: f64,
    /// Detections scoring at least this are kept.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
}

impl DetCurve {
    /// Curve through `(fppi, miss)` pairs; thresholds are placeholders.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        let n = pairs.len();
        DetCurve {
            points: pairs
                .iter()
                .enumerate()
                .map(|(i, &(fppi, miss_rate))| DetPoint { fppi, miss_rate, threshold: (n - i) as f64 })
                .collect(),
        }
    }

    /// Miss rate of the last point with `fppi <= f`; 1 when no threshold
    /// reaches that few false positives.
    pub fn miss_at(&self, f: f64) -> f64 {
        self.points.iter().take_while(|p| p.fppi <= f).last().map_or(1.0, |p| p.miss_rate)
    }
}

/// Sweeps the score threshold over every distinct detection score.
/// Greedy matching in score order means the matching at a threshold is
/// the prefix of the full matching, so one pass per image suffices.
pub fn det_curve(images: &[ImageEval], overlap: f64) -> Result<DetCurve> {
    let positives = images.iter().flat_map(|i| &i.annotations).filter(|a| !a.ignore).count();
    if positives == 0 {
        return Err(Error::Data("no non-ignore annotations: miss rate is undefined".into()));
    }
    let n_images = images.len() as f64;
    let mut events: Vec<(f64, MatchLabel)> = Vec::new();
    for img in images {
        let m = match_detections(&img.detections, &img.annotations, overlap);
        events.extend(img.detections.iter().zip(m.labels).map(|(d, l)| (d.score, l)));
    }
    events.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < events.len() {
        let t = events[i].0;
        while i < events.len() && events[i].0 == t {
            match events[i].1 {
                MatchLabel::TruePositive => tp += 1,
                MatchLabel::FalsePositive => fp += 1,
                MatchLabel::Ignored => {}
            }
            i += 1;
        }
        points.push(DetPoint { fppi: fp as f64 / n_images, miss_rate: 1.0 - tp as f64 / positives as f64, threshold: t });
    }
    if points.is_empty() {
        points.push(DetPoint { fppi: 0.0, miss_rate: 1.0, threshold: f64::INFINITY });
    }
    Ok(DetCurve { points })
}

/// Trapezoidal area under the piecewise-linear curve over `[lo, hi]`,
/// extended flat before the first and after the last point.
pub fn auc_continuous(curve: &DetCurve, lo: f64, hi: f64) -> f64 {
    let Some(first) = curve.points.first() else { return 1.0 * (hi - lo) };
    let last = curve.points.last().unwrap();
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(curve.points.len() + 2);
    pts.push((first.fppi.min(lo), first.miss_rate));
    pts.extend(curve.points.iter().map(|p| (p.fppi, p.miss_rate)));
    pts.push((last.fppi.max(hi), last.miss_rate));
    let mut area = 0.0;
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        let (a, b) = (x0.max(lo), x1.min(hi));
        if b <= a {
            continue;
        }
        let at = |x: f64| y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        area += (b - a) * (at(a) + at(b)) / 2.0;
    }
    area
}

/// Mean of the left-constant miss rate at the nine reference FPPIs.
pub fn auc_discrete9(curve: &DetCurve) -> f64 {
    REFERENCE_FPPI.iter().map(|&f| curve.miss_at(f)).sum::<f64>() / REFERENCE_FPPI.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureFilter {
    pub name: String,
    /// Heights must exceed this.
    pub min_height: Option<f64>,
    /// Heights must not exceed this.
    pub max_height: Option<f64>,
    pub occlusions: Vec<Occlusion>,
}

const ANY_OCCLUSION: [Occlusion; 3] = [Occlusion::None, Occlusion::Partial, Occlusion::Heavy];

impl MeasureFilter {
    pub fn all() -> Self {
        MeasureFilter { name: "all".into(), min_height: None, max_height: None, occlusions: ANY_OCCLUSION.to_vec() }
    }

    pub fn reasonable() -> Self {
        MeasureFilter {
            name: "reasonable".into(),
            min_height: Some(50.0),
            max_height: None,
            occlusions: vec![Occlusion::None, Occlusion::Partial],
        }
    }

    pub fn large() -> Self {
        MeasureFilter { name: "large".into(), min_height: Some(100.0), max_height: None, occlusions: ANY_OCCLUSION.to_vec() }
    }

    pub fn near() -> Self {
        MeasureFilter { name: "near".into(), min_height: Some(80.0), max_height: None, occlusions: ANY_OCCLUSION.to_vec() }
    }

    pub fn medium() -> Self {
        MeasureFilter {
            name: "medium".into(),
            min_height: Some(30.0),
            max_height: Some(80.0),
            occlusions: ANY_OCCLUSION.to_vec(),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "all" => Some(Self::all()),
            "reasonable" => Some(Self::reasonable()),
            "large" => Some(Self::large()),
            "near" => Some(Self::near()),
            "medium" => Some(Self::medium()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let (Some(lo), Some(hi)) = (self.min_height, self.max_height) {
            if !(lo < hi) {
                return Err(Error::Config(format!("measure {}: min height {lo} not below max {hi}", self.name)));
            }
        }
        Ok(())
    }

    pub fn accepts(&self, a: &Annotation) -> bool {
        let h = a.bbox.height;
        self.min_height.is_none_or(|m| h > m) && self.max_height.is_none_or(|m| h <= m) && self.occlusions.contains(&a.occlusion)
    }
}

/// Marks annotations outside the measure as ignore regions.
pub fn apply_measure(annos: &[Annotation], filter: &MeasureFilter) -> Vec<Annotation> {
    annos
        .iter()
        .map(|a| Annotation { ignore: a.ignore || !filter.accepts(a), ..*a })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub measure: String,
    pub dataset: String,
    pub auc_continuous: f64,
    pub auc_discrete9: f64,
    pub miss_at_1fppi: f64,
}

pub const REPORT_HEADER: &str = "measure,dataset,auc_continuous,auc_discrete9,miss_at_1fppi";

impl ReportRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6}",
            self.measure, self.dataset, self.auc_continuous, self.auc_discrete9, self.miss_at_1fppi
        )
    }
}

/// Curve and summary row for one measure.
pub fn evaluate(images: &[ImageEval], filter: &MeasureFilter, dataset: &str, overlap: f64) -> Result<(DetCurve, ReportRow)> {
    filter.validate()?;
    let filtered: Vec<ImageEval> = images
        .iter()
        .map(|i| ImageEval { annotations: apply_measure(&i.annotations, filter), ..i.clone() })
        .collect();
    let curve = det_curve(&filtered, overlap)
        .map_err(|e| Error::Data(format!("measure {}: {e}", filter.name)))?;
    let row = ReportRow {
        measure: filter.name.clone(),
        dataset: dataset.to_string(),
        auc_continuous: auc_continuous(&curve, 0.0, 1.0),
        auc_discrete9: auc_discrete9(&curve),
        miss_at_1fppi: curve.miss_at(1.0),
    };
    Ok((curve, row))
}

/// Standalone SVG of a DET curve on a log FPPI axis. The points are also
/// listed in a comment so the numbers survive without a viewer.
pub fn det_svg(curve: &DetCurve, row: &ReportRow) -> String {
    let (w, h, m) = (480.0, 400.0, 50.0);
    let (lx0, lx1) = (-3.0f64, 1.0f64);
    let px = |f: f64| m + (f.max(1e-3).log10().clamp(lx0, lx1) - lx0) / (lx1 - lx0) * (w - 2.0 * m);
    let py = |miss: f64| m + (1.0 - miss.clamp(0.0, 1.0)) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, "<!--\nfppi,miss_rate,threshold");
    for p in &curve.points {
        let _ = writeln!(s, "{:.6},{:.6},{}", p.fppi, p.miss_rate, p.threshold);
    }
    let _ = writeln!(s, "-->");
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * m,
        h - 2.0 * m
    );
    for e in -3..=1 {
        let x = px(10f64.powi(e));
        let _ = writeln!(s, r##"<line x1="{x:.1}" y1="{m}" x2="{x:.1}" y2="{}" stroke="#ddd"/>"##, h - m);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" font-size="11" text-anchor="middle">1e{e}</text>"#, h - m + 15.0);
    }
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let y = py(v);
        let _ = writeln!(s, r##"<line x1="{m}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/>"##, w - m);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">{v:.1}</text>"#, m - 4.0, y + 4.0);
    }
    let mut path: Vec<String> = Vec::new();
    if let Some(first) = curve.points.first() {
        path.push(format!("{:.2},{:.2}", px(1e-3), py(first.miss_rate)));
    }
    for p in &curve.points {
        path.push(format!("{:.2},{:.2}", px(p.fppi), py(p.miss_rate)));
    }
    if let Some(last) = curve.points.last() {
        path.push(format!("{:.2},{:.2}", px(10.0), py(last.miss_rate)));
    }
    let _ = writeln!(s, r#"<polyline fill="none" stroke="crimson" stroke-width="2" points="{}"/>"#, path.join(" "));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="30" font-size="13" text-anchor="middle">{} / {}: continuous AUC {:.4}, discrete AUC {:.4}</text>"#,
        w / 2.0,
        row.dataset,
        row.measure,
        row.auc_continuous,
        row.auc_discrete9
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">false positives per image</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">miss rate</text>"#,
        h / 2.0,
        h / 2.0
    );
    s.push_str("</svg>\n");
    s
}
