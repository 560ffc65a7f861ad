//! Images, colour conversion, window extraction, augmentation and
//! train/validation splitting.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::BoundingBox;
use crate::error::{Error, Result};
use crate::signal::{boxcar_downsample, FeatureMaps, Plane};

/// RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub channels: [Plane; 3],
}

impl RgbImage {
    pub fn new(r: Plane, g: Plane, b: Plane) -> Result<Self> {
        if r.shape() != g.shape() || r.shape() != b.shape() {
            return Err(Error::Dimension("RGB channels differ in shape".into()));
        }
        Ok(RgbImage { channels: [r, g, b] })
    }

    pub fn filled(rows: usize, cols: usize, rgb: [f64; 3]) -> Self {
        RgbImage { channels: rgb.map(|v| Plane::filled(rows, cols, v)) }
    }

    pub fn rows(&self) -> usize {
        self.channels[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.channels[0].cols()
    }

    pub fn get(&self, r: usize, c: usize) -> [f64; 3] {
        [self.channels[0][(r, c)], self.channels[1][(r, c)], self.channels[2][(r, c)]]
    }

    pub fn set(&mut self, r: usize, c: usize, rgb: [f64; 3]) {
        for (ch, v) in self.channels.iter_mut().zip(rgb) {
            ch[(r, c)] = v;
        }
    }

    /// Decodes PNG or PGM/PPM. Grayscale files are replicated to RGB.
    pub fn load(path: &Path) -> Result<Self> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if !matches!(ext.as_str(), "png" | "pgm" | "ppm" | "pnm") {
            return Err(Error::Data(format!("{}: only PNG and PGM/PPM images are supported", path.display())));
        }
        let img = image::open(path)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = RgbImage::filled(h, w, [0.0; 3]);
        for (x, y, p) in img.enumerate_pixels() {
            out.set(y as usize, x as usize, p.0.map(|v| f64::from(v) / 255.0));
        }
        Ok(out)
    }

    /// Writes an 8-bit PNG, clamping to `[0, 1]`.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut img = image::RgbImage::new(self.cols() as u32, self.rows() as u32);
        for (x, y, p) in img.enumerate_pixels_mut() {
            p.0 = self.get(y as usize, x as usize).map(to_u8);
        }
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a single plane as an 8-bit grayscale PNG, clamping to `[0, 1]`.
pub fn save_gray_png(plane: &Plane, path: &Path) -> Result<()> {
    let mut img = image::GrayImage::new(plane.cols() as u32, plane.rows() as u32);
    for (x, y, p) in img.enumerate_pixels_mut() {
        p.0 = [to_u8(plane[(y as usize, x as usize)])];
    }
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Full-range BT.601, inputs and luma in `[0, 1]`, chroma centred on 0.
pub fn rgb_to_yuv([r, g, b]: [f64; 3]) -> [f64; 3] {
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        -0.168736 * r - 0.331264 * g + 0.5 * b,
        0.5 * r - 0.418688 * g - 0.081312 * b,
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct YuvImage {
    pub y: Plane,
    pub u: Plane,
    pub v: Plane,
}

impl YuvImage {
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (rows, cols) = (img.rows(), img.cols());
        let mut planes = [Plane::zeros(rows, cols), Plane::zeros(rows, cols), Plane::zeros(rows, cols)];
        for r in 0..rows {
            for c in 0..cols {
                let yuv = rgb_to_yuv(img.get(r, c));
                for (p, v) in planes.iter_mut().zip(yuv) {
                    p[(r, c)] = v;
                }
            }
        }
        let [y, u, v] = planes;
        YuvImage { y, u, v }
    }

    pub fn rows(&self) -> usize {
        self.y.rows()
    }

    pub fn cols(&self) -> usize {
        self.y.cols()
    }

    pub fn resize(&self, rows: usize, cols: usize) -> Self {
        YuvImage { y: resize_bilinear(&self.y, rows, cols), u: resize_bilinear(&self.u, rows, cols), v: resize_bilinear(&self.v, rows, cols) }
    }

    /// Pads bottom/right by reflection up to at least `rows x cols`.
    pub fn pad_to(&self, rows: usize, cols: usize) -> Self {
        let (r, c) = (rows.max(self.rows()), cols.max(self.cols()));
        if (r, c) == (self.rows(), self.cols()) {
            return self.clone();
        }
        let pad = |p: &Plane| Plane::from_fn(r, c, |i, j| p[(reflect(i as isize, p.rows()), reflect(j as isize, p.cols()))]);
        YuvImage { y: pad(&self.y), u: pad(&self.u), v: pad(&self.v) }
    }

    pub fn luma(&self) -> FeatureMaps {
        FeatureMaps::single(self.y.clone())
    }

    /// U and V averaged over non-overlapping `s x s` blocks.
    pub fn chroma(&self, s: usize) -> Result<FeatureMaps> {
        let uv = FeatureMaps::new(vec![self.u.clone(), self.v.clone()])?;
        boxcar_downsample(&uv, s, s)
    }
}

/// Half-sample symmetric reflection of an index into `0..n`.
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Bilinear sample at a real-valued position (pixel centres at integers),
/// reflecting outside the plane.
pub fn sample_bilinear(p: &Plane, r: f64, c: f64) -> f64 {
    let (r0, c0) = (r.floor(), c.floor());
    let (fr, fc) = (r - r0, c - c0);
    let (ri, ci) = (r0 as isize, c0 as isize);
    let at = |dr: isize, dc: isize| p[(reflect(ri + dr, p.rows()), reflect(ci + dc, p.cols()))];
    if fr == 0.0 && fc == 0.0 {
        return at(0, 0);
    }
    let top = (1.0 - fc) * at(0, 0) + fc * at(0, 1);
    let bottom = (1.0 - fc) * at(1, 0) + fc * at(1, 1);
    (1.0 - fr) * top + fr * bottom
}

pub fn resize_bilinear(p: &Plane, rows: usize, cols: usize) -> Plane {
    let sr = p.rows() as f64 / rows as f64;
    let sc = p.cols() as f64 / cols as f64;
    Plane::from_fn(rows, cols, |r, c| sample_bilinear(p, (r as f64 + 0.5) * sr - 0.5, (c as f64 + 0.5) * sc - 0.5))
}

/// Input geometry of the detection window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Window height over pedestrian height.
    pub context: f64,
    pub uv_subsample: usize,
}

impl WindowGeometry {
    pub const PAPER: WindowGeometry = WindowGeometry { rows: 126, cols: 78, context: 1.4, uv_subsample: 3 };

    pub fn uv_shape(&self) -> (usize, usize) {
        (self.rows / self.uv_subsample, self.cols / self.uv_subsample)
    }

    /// Window region around a pedestrian box: scaled by the context ratio
    /// and widened to the window aspect, same centre.
    pub fn context_region(&self, anno: &BoundingBox) -> BoundingBox {
        let height = anno.height * self.context;
        let width = height * self.cols as f64 / self.rows as f64;
        let (cy, cx) = (anno.top + anno.height / 2.0, anno.left + anno.width / 2.0);
        BoundingBox::new(cx - width / 2.0, cy - height / 2.0, width, height, anno.score)
    }

    /// Inverse of [`context_region`](Self::context_region) for a window-shaped region.
    pub fn pedestrian_box(&self, region: &BoundingBox) -> BoundingBox {
        let height = region.height / self.context;
        let width = region.width / self.context;
        let (cy, cx) = (region.top + region.height / 2.0, region.left + region.width / 2.0);
        BoundingBox::new(cx - width / 2.0, cy - height / 2.0, width, height, region.score)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.uv_subsample == 0 || self.uv_shape().0 == 0 || self.uv_shape().1 == 0 {
            return Err(Error::Config(format!("degenerate window geometry {self:?}")));
        }
        if !(self.context >= 1.0) {
            return Err(Error::Config(format!("context ratio must be >= 1, got {}", self.context)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Pedestrian,
    Background,
}

impl Label {
    pub fn target(self) -> f64 {
        match self {
            Label::Pedestrian => 1.0,
            Label::Background => 0.0,
        }
    }
}

/// Geometric change applied to a window after extraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deformation {
    pub mirrored: bool,
    /// Translation in luma pixels, rows then columns.
    pub shift: (f64, f64),
    pub scale: f64,
}

impl Deformation {
    pub const IDENTITY: Deformation = Deformation { mirrored: false, shift: (0.0, 0.0), scale: 1.0 };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub image_id: String,
    /// Groups windows derived from one physical object; splits never cut a group.
    pub group: u64,
    /// Source region in image coordinates.
    pub region: BoundingBox,
    pub deformation: Deformation,
}

/// One training/test window: luma at full resolution, chroma subsampled.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    pub y: FeatureMaps,
    pub uv: FeatureMaps,
    pub label: Label,
    pub provenance: Provenance,
}

/// Resamples `region` of `img` onto the window grid and subsamples chroma.
pub fn extract_region(img: &YuvImage, region: &BoundingBox, geom: &WindowGeometry) -> Result<(FeatureMaps, FeatureMaps)> {
    if !(region.width > 0.0 && region.height > 0.0) {
        return Err(Error::Data(format!("degenerate region {region:?}")));
    }
    let sr = region.height / geom.rows as f64;
    let sc = region.width / geom.cols as f64;
    let grid = |p: &Plane| {
        Plane::from_fn(geom.rows, geom.cols, |r, c| {
            sample_bilinear(p, region.top + (r as f64 + 0.5) * sr - 0.5, region.left + (c as f64 + 0.5) * sc - 0.5)
        })
    };
    let window = YuvImage { y: grid(&img.y), u: grid(&img.u), v: grid(&img.v) };
    Ok((window.luma(), window.chroma(geom.uv_subsample)?))
}

/// Window centred on a pedestrian annotation with the context margin.
pub fn extract_window(
    img: &YuvImage,
    anno: &BoundingBox,
    geom: &WindowGeometry,
    label: Label,
    image_id: &str,
    group: u64,
) -> Result<SampleWindow> {
    if !(anno.width > 0.0 && anno.height > 0.0) {
        return Err(Error::Data(format!("degenerate annotation in {image_id}: {anno:?}")));
    }
    let region = geom.context_region(anno);
    let (y, uv) = extract_region(img, &region, geom)?;
    Ok(SampleWindow {
        y,
        uv,
        label,
        provenance: Provenance { image_id: image_id.to_string(), group, region, deformation: Deformation::IDENTITY },
    })
}

fn warp(p: &Plane, shift: (f64, f64), scale: f64) -> Plane {
    let (cr, cc) = (p.rows() as f64 / 2.0, p.cols() as f64 / 2.0);
    Plane::from_fn(p.rows(), p.cols(), |r, c| {
        let sr = (r as f64 + 0.5 - cr) / scale + cr - shift.0 - 0.5;
        let sc = (c as f64 + 0.5 - cc) / scale + cc - shift.1 - 0.5;
        sample_bilinear(p, sr, sc)
    })
}

fn map_planes(x: &FeatureMaps, f: impl Fn(&Plane) -> Plane) -> FeatureMaps {
    FeatureMaps::new(x.maps().iter().map(f).collect()).expect("shape-preserving map")
}

pub fn mirror(s: &SampleWindow) -> SampleWindow {
    let mut out = s.clone();
    out.y = map_planes(&s.y, Plane::flip_horizontal);
    out.uv = map_planes(&s.uv, Plane::flip_horizontal);
    out.provenance.deformation.mirrored = !s.provenance.deformation.mirrored;
    out
}

/// Translates and scales about the window centre; chroma shifts are
/// divided by the chroma subsampling factor.
pub fn deform(s: &SampleWindow, shift: (f64, f64), scale: f64, uv_subsample: usize) -> SampleWindow {
    let k = uv_subsample as f64;
    let mut out = s.clone();
    out.y = map_planes(&s.y, |p| warp(p, shift, scale));
    out.uv = map_planes(&s.uv, |p| warp(p, (shift.0 / k, shift.1 / k), scale));
    out.provenance.deformation.shift = shift;
    out.provenance.deformation.scale = scale;
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub deformations: usize,
    pub max_shift: f64,
    pub scale_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { deformations: 5, max_shift: 2.0, scale_range: (0.95, 1.05) }
    }
}

/// Original, its deformations, the mirror and its deformations:
/// `2 * (1 + deformations)` windows (12 by default).
pub fn augment(s: &SampleWindow, cfg: &AugmentConfig, uv_subsample: usize, seed: u64) -> Vec<SampleWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * (cfg.deformations + 1));
    for base in [s.clone(), mirror(s)] {
        out.push(base.clone());
        for _ in 0..cfg.deformations {
            let shift = (
                rng.gen_range(-cfg.max_shift..=cfg.max_shift),
                rng.gen_range(-cfg.max_shift..=cfg.max_shift),
            );
            let scale = rng.gen_range(cfg.scale_range.0..=cfg.scale_range.1);
            out.push(deform(&base, shift, scale, uv_subsample));
        }
    }
    out
}

/// Seeded split keeping every provenance group on one side. At least one
/// group goes to each side when there are two or more groups.
pub fn split_dataset<T: Clone>(
    items: &[T],
    group_of: impl Fn(&T) -> (String, u64),
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction must be in (0, 1), got {val_fraction}")));
    }
    let mut groups: BTreeMap<(String, u64), Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        groups.entry(group_of(it)).or_default().push(i);
    }
    let mut keys: Vec<_> = groups.keys().cloned().collect();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = keys.len();
    let n_val = if n < 2 { 0 } else { ((val_fraction * n as f64).round() as usize).clamp(1, n - 1) };
    let mut is_val = vec![false; items.len()];
    for k in &keys[..n_val] {
        for &i in &groups[k] {
            is_val[i] = true;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (it, v) in items.iter().zip(is_val) {
        if v {
            val.push(it.clone());
        } else {
            train.push(it.clone());
        }
    }
    Ok((train, val))
}

pub fn split_windows(samples: &[SampleWindow], val_fraction: f64, seed: u64) -> Result<(Vec<SampleWindow>, Vec<SampleWindow>)> {
    split_dataset(samples, |s| (s.provenance.image_id.clone(), s.provenance.group), val_fraction, seed)
}

/// Random background windows: a scale drawn uniformly from `scales`, then
/// a uniformly placed window at that scale. Scales at which the image is
/// smaller than the window are skipped.
pub fn sample_negatives(
    img: &YuvImage,
    image_id: &str,
    count: usize,
    geom: &WindowGeometry,
    scales: &[f64],
    rng: &mut impl Rng,
) -> Result<Vec<SampleWindow>> {
    let usable: Vec<f64> = scales
        .iter()
        .copied()
        .filter(|s| img.rows() as f64 * s >= geom.rows as f64 && img.cols() as f64 * s >= geom.cols as f64)
        .collect();
    if usable.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let s = usable[rng.gen_range(0..usable.len())];
        let (h, w) = (geom.rows as f64 / s, geom.cols as f64 / s);
        let top = rng.gen_range(0.0..=(img.rows() as f64 - h).max(0.0));
        let left = rng.gen_range(0.0..=(img.cols() as f64 - w).max(0.0));
        let region = BoundingBox::new(left, top, w, h, 0.0);
        let (y, uv) = extract_region(img, &region, geom)?;
        out.push(SampleWindow {
            y,
            uv,
            label: Label::Background,
            provenance: Provenance {
                image_id: image_id.to_string(),
                group: k as u64,
                region,
                deformation: Deformation::IDENTITY,
            },
        });
    }
    Ok(out)
}

/// Image files (PNG, PGM, PPM) in a directory, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if matches!(ext.as_str(), "png" | "pgm" | "ppm" | "pnm") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// File stem used as the image id in annotation and detection files.
pub fn image_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_image(rows: usize, cols: usize) -> YuvImage {
        let mut img = RgbImage::filled(rows, cols, [0.0; 3]);
        for r in 0..rows {
            for c in 0..cols {
                img.set(r, c, [r as f64 / rows as f64, c as f64 / cols as f64, ((r * 7 + c * 3) % 11) as f64 / 10.0]);
            }
        }
        YuvImage::from_rgb(&img)
    }

    #[test]
    fn context_of_a_90px_pedestrian_is_126px() {
        let anno = BoundingBox::new(100.0, 50.0, 40.0, 90.0, 1.0);
        let region = WindowGeometry::PAPER.context_region(&anno);
        assert!((region.height - 126.0).abs() < 1e-12);
        assert!((region.width - 78.0).abs() < 1e-12);
        assert!((region.top + region.height / 2.0 - 95.0).abs() < 1e-12);
        let back = WindowGeometry::PAPER.pedestrian_box(&region);
        assert!((back.height - 90.0).abs() < 1e-12);
    }

    #[test]
    fn gray_has_no_chroma() {
        for g in [0.0, 0.3, 1.0] {
            let [y, u, v] = rgb_to_yuv([g, g, g]);
            assert!((y - g).abs() < 1e-12);
            assert!(u.abs() < 1e-12 && v.abs() < 1e-12, "{u} {v}");
        }
    }

    #[test]
    fn yuv_matches_the_matrix() {
        let m = [[0.299, 0.587, 0.114], [-0.168736, -0.331264, 0.5], [0.5, -0.418688, -0.081312]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..64 {
            let rgb = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let got = rgb_to_yuv(rgb);
            for k in 0..3 {
                let want: f64 = (0..3).map(|j| m[k][j] * rgb[j]).sum();
                assert!((got[k] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn window_shape_is_fixed() {
        let img = ramp_image(200, 160);
        for h in [10.0, 37.5, 90.0, 300.0] {
            let anno = BoundingBox::new(20.0, 30.0, h * 0.4, h, 1.0);
            let s = extract_window(&img, &anno, &WindowGeometry::PAPER, Label::Pedestrian, "a", 0).unwrap();
            assert_eq!(s.y.shape(), (1, 126, 78));
            assert_eq!(s.uv.shape(), (2, 42, 26));
        }
        let bad = BoundingBox::new(0.0, 0.0, 0.0, 10.0, 1.0);
        assert!(extract_window(&img, &bad, &WindowGeometry::PAPER, Label::Pedestrian, "a", 0).is_err());
    }

    #[test]
    fn unit_scale_extraction_is_a_crop() {
        let img = ramp_image(140, 90);
        let region = BoundingBox::new(5.0, 7.0, 78.0, 126.0, 0.0);
        let (y, uv) = extract_region(&img, &region, &WindowGeometry::PAPER).unwrap();
        assert_eq!(y.maps()[0], img.y.crop(7, 5, 126, 78).unwrap());
        let u = img.u.crop(7, 5, 126, 78).unwrap();
        assert_eq!(uv.maps()[0], crate::signal::boxcar_plane(&u, 3, 3).unwrap());
    }

    #[test]
    fn reflection_indices() {
        let got: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
    }

    fn sample() -> SampleWindow {
        let img = ramp_image(160, 100);
        extract_window(&img, &BoundingBox::new(30.0, 20.0, 30.0, 90.0, 1.0), &WindowGeometry::PAPER, Label::Pedestrian, "x", 3)
            .unwrap()
    }

    #[test]
    fn identity_deformation_and_double_mirror() {
        let s = sample();
        let d = deform(&s, (0.0, 0.0), 1.0, 3);
        assert_eq!(d.y, s.y);
        assert_eq!(d.uv, s.uv);
        let mm = mirror(&mirror(&s));
        assert_eq!(mm, s);
    }

    #[test]
    fn augmentation_count_and_order() {
        let s = sample();
        let out = augment(&s, &AugmentConfig::default(), 3, 9);
        assert_eq!(out.len(), 12);
        assert_eq!(out[0], s);
        assert_eq!(out[6], mirror(&s));
        for (i, a) in out.iter().enumerate() {
            assert_eq!(a.y.shape(), (1, 126, 78));
            assert_eq!(a.provenance.deformation.mirrored, i >= 6);
            let d = a.provenance.deformation;
            assert!(d.shift.0.abs() <= 2.0 && d.shift.1.abs() <= 2.0);
            assert!((0.95..=1.05).contains(&d.scale));
        }
        assert_eq!(augment(&s, &AugmentConfig::default(), 3, 9), out);
    }

    #[test]
    fn split_keeps_groups_together() {
        let items: Vec<(String, u64, usize)> = (0..100).map(|i| ("img".to_string(), (i / 10) as u64, i)).collect();
        let (train, val) = split_dataset(&items, |t| (t.0.clone(), t.1), 0.1, 4).unwrap();
        assert_eq!(val.len(), 10);
        assert_eq!(train.len(), 90);
        let g = val[0].1;
        assert!(val.iter().all(|t| t.1 == g));
        assert!(split_dataset(&items, |t| (t.0.clone(), t.1), 1.0, 4).is_err());
    }

    #[test]
    fn resize_identity() {
        let img = ramp_image(20, 13);
        assert_eq!(resize_bilinear(&img.y, 20, 13), img.y);
    }

    #[test]
    fn png_roundtrip_is_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let mut img = RgbImage::filled(5, 4, [0.2, 0.4, 0.6]);
        img.set(1, 2, [1.0, 0.0, 0.5]);
        img.save_png(&path).unwrap();
        let back = RgbImage::load(&path).unwrap();
        for ch in 0..3 {
            for (a, b) in back.channels[ch].as_slice().iter().zip(img.channels[ch].as_slice()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
        assert!(RgbImage::load(&dir.path().join("a.jpg")).is_err());
    }
}
