//! Boxes, overlap, non-maximum suppression, the scale pyramid, sliding
//! window detection and hard negative mining.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Deformation, Label, Provenance, SampleWindow, WindowGeometry, YuvImage};
use crate::error::{Error, Result};
use crate::network::{crop_window, Network};
use crate::signal::Plane;

/// Half-open pixel rectangle `[left, left + width) x [top, top + height)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub score: f64,
}

impl BoundingBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64, score: f64) -> Self {
        BoundingBox { left, top, width, height, score }
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn is_valid(&self) -> bool {
        self.width > 0.0 && self.height > 0.0 && self.left.is_finite() && self.top.is_finite() && self.area().is_finite()
    }

    pub fn intersection(&self, other: &BoundingBox) -> f64 {
        let w = self.right().min(other.right()) - self.left.max(other.left);
        let h = self.bottom().min(other.bottom()) - self.top.max(other.top);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b);
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Intersection over the smaller area.
pub fn min_overlap(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b);
    if inter == 0.0 {
        return 0.0;
    }
    inter / a.area().min(b.area())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Overlap {
    #[default]
    Iou,
    Min,
}

impl Overlap {
    pub fn measure(self, a: &BoundingBox, b: &BoundingBox) -> f64 {
        match self {
            Overlap::Iou => iou(a, b),
            Overlap::Min => min_overlap(a, b),
        }
    }
}

pub const NMS_THRESHOLD: f64 = 0.6;

/// Indices of the boxes kept by greedy suppression, in descending score
/// order (earlier index first on ties). A box survives iff its overlap
/// with every previously kept box is at most `threshold`.
pub fn nms_indices(boxes: &[BoundingBox], threshold: f64, overlap: Overlap) -> Vec<usize> {
    let order = score_order(boxes.iter().map(|b| b.score));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| overlap.measure(&boxes[k], &boxes[i]) <= threshold) {
            kept.push(i);
        }
    }
    kept
}

pub fn nms(boxes: &[BoundingBox], threshold: f64) -> Vec<BoundingBox> {
    nms_indices(boxes, threshold, Overlap::Iou).into_iter().map(|i| boxes[i]).collect()
}

/// Indices sorted by descending score, ties by ascending index.
pub(crate) fn score_order(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PyramidSpec {
    pub up_ratio: f64,
    pub scale_stride: f64,
    /// Smallest kept scale makes the image this fraction of the window.
    pub min_scale_factor: f64,
}

impl Default for PyramidSpec {
    fn default() -> Self {
        PyramidSpec { up_ratio: 1.3, scale_stride: 1.10, min_scale_factor: 0.75 }
    }
}

impl PyramidSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.up_ratio >= 1.0) || !(self.scale_stride > 1.0) || !(self.min_scale_factor > 0.0 && self.min_scale_factor <= 1.0) {
            return Err(Error::Config(format!("invalid pyramid {self:?}")));
        }
        Ok(())
    }

    /// `up_ratio / stride^k` for every `k` at which the scaled image is at
    /// least `min_scale_factor` times the window in both directions.
    pub fn scales(&self, rows: usize, cols: usize, window: &WindowGeometry) -> Vec<f64> {
        let min_r = self.min_scale_factor * window.rows as f64;
        let min_c = self.min_scale_factor * window.cols as f64;
        let mut out = Vec::new();
        for k in 0..10_000 {
            let s = self.up_ratio / self.scale_stride.powi(k);
            if s * (rows as f64) < min_r || s * (cols as f64) < min_c {
                break;
            }
            out.push(s);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct PyramidLevel {
    pub scale: f64,
    /// Resampled image, reflect-padded to at least the window size.
    pub image: YuvImage,
}

pub fn build_pyramid(img: &YuvImage, spec: &PyramidSpec, window: &WindowGeometry) -> Vec<PyramidLevel> {
    spec.scales(img.rows(), img.cols(), window)
        .into_iter()
        .map(|s| {
            let rows = ((img.rows() as f64 * s).round() as usize).max(1);
            let cols = ((img.cols() as f64 * s).round() as usize).max(1);
            let scaled = if (rows, cols) == (img.rows(), img.cols()) { img.clone() } else { img.resize(rows, cols) };
            PyramidLevel { scale: s, image: scaled.pad_to(window.rows, window.cols) }
        })
        .collect()
}

/// Window covered by score cell `(r, c)` at `scale`, in original image
/// coordinates.
pub fn cell_to_window(r: usize, c: usize, stride: usize, scale: f64, window: &WindowGeometry, score: f64) -> BoundingBox {
    BoundingBox::new(
        (c * stride) as f64 / scale,
        (r * stride) as f64 / scale,
        window.cols as f64 / scale,
        window.rows as f64 / scale,
        score,
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scoring {
    /// One fully convolutional pass per scale.
    #[default]
    Dense,
    /// One forward pass per window; matches [`Network::forward`] exactly.
    Windowed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub threshold: f64,
    pub pyramid: PyramidSpec,
    pub nms_threshold: f64,
    pub overlap: Overlap,
    pub scoring: Scoring,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            threshold: 0.5,
            pyramid: PyramidSpec::default(),
            nms_threshold: NMS_THRESHOLD,
            overlap: Overlap::Iou,
            scoring: Scoring::Dense,
        }
    }
}

fn stride_of(net: &Network) -> Result<usize> {
    net.spec.detection_stride().ok_or_else(|| {
        Error::Config("network strides are not aligned across stage 2 and the branch; no detection grid".into())
    })
}

fn score_level(net: &Network, level: &PyramidLevel, scoring: Scoring, stride: usize) -> Result<Plane> {
    match scoring {
        Scoring::Dense => net.score_map_dense(&level.image),
        Scoring::Windowed => net.score_map_windowed(&level.image, stride),
    }
}

/// Window boxes (not yet reduced to the pedestrian region) scoring
/// strictly above `threshold`, scale by scale, cells in raster order.
fn candidate_windows(net: &Network, img: &YuvImage, cfg: &DetectConfig) -> Result<Vec<(usize, usize, usize, BoundingBox)>> {
    cfg.pyramid.validate()?;
    let stride = stride_of(net)?;
    let levels = build_pyramid(img, &cfg.pyramid, &net.spec.window);
    let maps = levels
        .par_iter()
        .map(|l| score_level(net, l, cfg.scoring, stride))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (li, (level, map)) in levels.iter().zip(&maps).enumerate() {
        for r in 0..map.rows() {
            for c in 0..map.cols() {
                let p = map[(r, c)];
                if p > cfg.threshold {
                    out.push((li, r, c, cell_to_window(r, c, stride, level.scale, &net.spec.window, p)));
                }
            }
        }
    }
    Ok(out)
}

/// Pedestrian boxes for every window above threshold, before suppression.
pub fn detect(net: &Network, img: &YuvImage, cfg: &DetectConfig) -> Result<Vec<BoundingBox>> {
    if net.classifier.weights.iter().all(|&w| w == 0.0) {
        log::warn!("classifier weights are all zero; every window scores logistic(bias)");
    }
    if !net.is_finite() {
        return Err(Error::Divergence("network has non-finite parameters".into()));
    }
    let w = net.spec.window;
    Ok(candidate_windows(net, img, cfg)?.into_iter().map(|(_, _, _, b)| w.pedestrian_box(&b)).collect())
}

/// [`detect`] followed by suppression.
pub fn detect_nms(net: &Network, img: &YuvImage, cfg: &DetectConfig) -> Result<Vec<BoundingBox>> {
    let boxes = detect(net, img, cfg)?;
    Ok(nms_indices(&boxes, cfg.nms_threshold, cfg.overlap).into_iter().map(|i| boxes[i]).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub threshold: f64,
    pub per_image: usize,
    pub per_pass: usize,
    pub pyramid: PyramidSpec,
    pub nms_threshold: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig { threshold: 0.5, per_image: 5, per_pass: 3000, pyramid: PyramidSpec::default(), nms_threshold: NMS_THRESHOLD }
    }
}

#[derive(Clone, Debug)]
pub struct MinedWindow {
    pub score: f64,
    pub window: SampleWindow,
}

/// Most offending windows on pedestrian-free images: per image the top
/// `per_image` survivors of suppression, then the `per_pass` highest
/// overall. Windows are scored one by one so stored scores equal
/// [`Network::forward`] on the returned samples.
pub fn mine_hard_negatives(net: &Network, images: &[(String, YuvImage)], cfg: &MiningConfig) -> Result<Vec<MinedWindow>> {
    let dcfg = DetectConfig {
        threshold: cfg.threshold,
        pyramid: cfg.pyramid,
        nms_threshold: cfg.nms_threshold,
        overlap: Overlap::Iou,
        scoring: Scoring::Windowed,
    };
    let stride = stride_of(net)?;
    let w = net.spec.window;
    let per_image = images
        .iter()
        .map(|(id, img)| -> Result<Vec<MinedWindow>> {
            let cands = candidate_windows(net, img, &dcfg)?;
            let boxes: Vec<BoundingBox> = cands.iter().map(|c| c.3).collect();
            let keep = nms_indices(&boxes, cfg.nms_threshold, Overlap::Iou);
            let levels = build_pyramid(img, &cfg.pyramid, &w);
            keep.into_iter()
                .take(cfg.per_image)
                .map(|i| {
                    let (li, r, c, region) = cands[i];
                    let level = &levels[li].image;
                    let chroma = level.chroma(w.uv_subsample)?;
                    let (y, uv) = crop_window(&level.y, &chroma, &w, r * stride, c * stride)?;
                    Ok(MinedWindow {
                        score: region.score,
                        window: SampleWindow {
                            y,
                            uv,
                            label: Label::Background,
                            provenance: Provenance {
                                image_id: id.clone(),
                                group: i as u64,
                                region,
                                deformation: Deformation::IDENTITY,
                            },
                        },
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<MinedWindow> = per_image.into_iter().flatten().collect();
    let order = score_order(all.iter().map(|m| m.score));
    let mut slots: Vec<Option<MinedWindow>> = all.into_iter().map(Some).collect();
    Ok(order.into_iter().take(cfg.per_pass).map(|i| slots[i].take().expect("each index once")).collect())
}

pub const DETECTIONS_HEADER: [&str; 6] = ["image_id", "left", "top", "width", "height", "score"];

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BoundingBox,
}

/// CSV with a header row; coordinates to 3 decimals, score to 6.
pub fn write_detections(out: impl Write, dets: &[Detection]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Data(format!("writing detections: {e}"));
    w.write_record(DETECTIONS_HEADER).map_err(csv_err)?;
    for d in dets {
        let b = &d.bbox;
        w.write_record([
            d.image_id.clone(),
            format!("{:.3}", b.left),
            format!("{:.3}", b.top),
            format!("{:.3}", b.width),
            format!("{:.3}", b.height),
            format!("{:.6}", b.score),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_detections(input: impl Read) -> Result<Vec<Detection>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| Error::Data(format!("detections header: {e}")))?.clone();
    if header.iter().collect::<Vec<_>>() != DETECTIONS_HEADER {
        return Err(Error::Data(format!("detections header must be {}", DETECTIONS_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("detections row {}: {e}", line + 2)))?;
        let num = |k: usize| -> Result<f64> {
            rec[k].trim().parse().map_err(|_| Error::Data(format!("detections row {}: bad number {:?}", line + 2, &rec[k])))
        };
        let bbox = BoundingBox::new(num(1)?, num(2)?, num(3)?, num(4)?, num(5)?);
        if !bbox.is_valid() {
            return Err(Error::Data(format!("detections row {}: invalid box {bbox:?}", line + 2)));
        }
        out.push(Detection { image_id: rec[0].to_string(), bbox });
    }
    Ok(out)
}
