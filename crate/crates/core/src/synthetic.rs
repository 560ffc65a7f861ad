//! Seeded synthetic data: oriented bars for feature learning, and
//! stick-figure pedestrians on cluttered backgrounds for detection.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Deformation, Label, Provenance, RgbImage, SampleWindow, WindowGeometry, YuvImage};
use crate::detector::BoundingBox;
use crate::error::Result;
use crate::evaluation::{format_annotations, Annotation};
use crate::signal::{FeatureMaps, Plane};

/// `n` single-map images of a bright bar through the centre region at a
/// random orientation, zero-mean, on a dark background.
pub fn oriented_bars(n: usize, size: usize, seed: u64) -> Vec<FeatureMaps> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let half = size as f64 / 2.0;
            let cy = half + rng.gen_range(-1.5..1.5) - 0.5;
            let cx = half + rng.gen_range(-1.5..1.5) - 0.5;
            let (s, c) = theta.sin_cos();
            let mut p = Plane::from_fn(size, size, |r, col| {
                // distance from the line through (cy, cx) with direction theta
                let d = (r as f64 - cy) * c - (col as f64 - cx) * s;
                (-d * d / 1.0).exp()
            });
            let mean = p.sum() / p.len() as f64;
            p = p.map(|v| v - mean);
            FeatureMaps::single(p)
        })
        .collect()
}

fn fill_rect(img: &mut RgbImage, top: f64, left: f64, h: f64, w: f64, rgb: [f64; 3]) {
    let r0 = top.round().max(0.0) as usize;
    let c0 = left.round().max(0.0) as usize;
    let r1 = ((top + h).round().max(0.0) as usize).min(img.rows());
    let c1 = ((left + w).round().max(0.0) as usize).min(img.cols());
    for r in r0..r1 {
        for c in c0..c1 {
            img.set(r, c, rgb);
        }
    }
}

fn fill_disc(img: &mut RgbImage, cy: f64, cx: f64, radius: f64, rgb: [f64; 3]) {
    let r0 = (cy - radius).floor().max(0.0) as usize;
    let c0 = (cx - radius).floor().max(0.0) as usize;
    let r1 = ((cy + radius).ceil().max(0.0) as usize + 1).min(img.rows());
    let c1 = ((cx + radius).ceil().max(0.0) as usize + 1).min(img.cols());
    for r in r0..r1 {
        for c in c0..c1 {
            let (dy, dx) = (r as f64 + 0.5 - cy, c as f64 + 0.5 - cx);
            if dy * dy + dx * dx <= radius * radius {
                img.set(r, c, rgb);
            }
        }
    }
}

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]
}

/// Gradient, random rectangles and poles, and pixel noise.
pub fn clutter(rows: usize, cols: usize, rng: &mut impl Rng) -> RgbImage {
    let base = random_color(rng);
    let tilt = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
    let mut img = RgbImage::filled(rows, cols, [0.0; 3]);
    for r in 0..rows {
        for c in 0..cols {
            let g = tilt[0] * r as f64 / rows as f64 + tilt[1] * c as f64 / cols as f64;
            img.set(r, c, base.map(|v| (v + g).clamp(0.0, 1.0)));
        }
    }
    let area = (rows * cols) as f64;
    let n_rects = (area / 400.0).ceil() as usize + rng.gen_range(0..3);
    for _ in 0..n_rects {
        let h = rng.gen_range(0.05..0.5) * rows as f64;
        let w = rng.gen_range(0.05..0.5) * cols as f64;
        let top = rng.gen_range(-0.2..1.0) * rows as f64;
        let left = rng.gen_range(-0.2..1.0) * cols as f64;
        let col = random_color(rng);
        fill_rect(&mut img, top, left, h, w, col);
    }
    // vertical structures resembling limbs and poles
    for _ in 0..rng.gen_range(0..3) {
        let w = rng.gen_range(0.02..0.08) * cols as f64 + 1.0;
        let left = rng.gen_range(0.0..1.0) * cols as f64;
        let top = rng.gen_range(0.0..0.5) * rows as f64;
        let col = random_color(rng);
        fill_rect(&mut img, top, left, rng.gen_range(0.3..0.9) * rows as f64, w, col);
    }
    add_noise(&mut img, 0.03, rng);
    img
}

fn add_noise(img: &mut RgbImage, amp: f64, rng: &mut impl Rng) {
    for ch in img.channels.iter_mut() {
        for v in ch.as_mut_slice() {
            *v = (*v + rng.gen_range(-amp..amp)).clamp(0.0, 1.0);
        }
    }
}

/// Draws a stick-figure pedestrian filling `b` (head, torso, arms, legs).
pub fn draw_pedestrian(img: &mut RgbImage, b: &BoundingBox, rng: &mut impl Rng) {
    let (h, w) = (b.height, b.width);
    let cx = b.left + w / 2.0;
    let skin = [rng.gen_range(0.55..0.95), rng.gen_range(0.4..0.75), rng.gen_range(0.3..0.6)];
    let shirt = random_color(rng);
    let pants = [rng.gen_range(0.0..0.4), rng.gen_range(0.0..0.4), rng.gen_range(0.0..0.5)];
    let head_r = 0.075 * h;
    fill_disc(img, b.top + 0.085 * h, cx, head_r, skin);
    let torso_w = 0.55 * w;
    fill_rect(img, b.top + 0.16 * h, cx - torso_w / 2.0, 0.4 * h, torso_w, shirt);
    let arm_w = 0.12 * w;
    fill_rect(img, b.top + 0.17 * h, cx - torso_w / 2.0 - arm_w, 0.34 * h, arm_w, shirt);
    fill_rect(img, b.top + 0.17 * h, cx + torso_w / 2.0, 0.34 * h, arm_w, shirt);
    let stride = rng.gen_range(0.0..0.15) * w;
    let leg_w = 0.2 * w;
    fill_rect(img, b.top + 0.55 * h, cx - leg_w - 0.02 * w - stride, 0.45 * h, leg_w, pants);
    fill_rect(img, b.top + 0.55 * h, cx + 0.02 * w + stride, 0.45 * h, leg_w, pants);
}

/// Pedestrian box of the given height with the window aspect ratio.
pub fn pedestrian_box(top: f64, left: f64, height: f64, geom: &WindowGeometry) -> BoundingBox {
    BoundingBox::new(left, top, height * geom.cols as f64 / geom.rows as f64, height, 0.0)
}

pub struct Scene {
    pub image: RgbImage,
    pub pedestrians: Vec<BoundingBox>,
}

/// Cluttered image with up to `count` non-overlapping pedestrians whose
/// heights are drawn from `heights`.
pub fn pedestrian_scene(rows: usize, cols: usize, count: usize, heights: (f64, f64), geom: &WindowGeometry, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = clutter(rows, cols, &mut rng);
    let mut pedestrians: Vec<BoundingBox> = Vec::new();
    for _ in 0..count * 20 {
        if pedestrians.len() == count {
            break;
        }
        let h = rng.gen_range(heights.0..=heights.1);
        let probe = pedestrian_box(0.0, 0.0, h, geom);
        if probe.width >= cols as f64 || h >= rows as f64 {
            continue;
        }
        let b = pedestrian_box(rng.gen_range(0.0..rows as f64 - h), rng.gen_range(0.0..cols as f64 - probe.width), h, geom);
        let margin = |x: &BoundingBox| BoundingBox::new(x.left - 2.0, x.top - 2.0, x.width + 4.0, x.height + 4.0, 0.0);
        if pedestrians.iter().all(|p| margin(p).intersection(&b) == 0.0) {
            draw_pedestrian(&mut image, &b, &mut rng);
            pedestrians.push(b);
        }
    }
    add_noise(&mut image, 0.02, &mut rng);
    Scene { image, pedestrians }
}

fn window_sample(img: &RgbImage, geom: &WindowGeometry, label: Label, group: u64) -> Result<SampleWindow> {
    let yuv = YuvImage::from_rgb(img);
    Ok(SampleWindow {
        y: yuv.luma(),
        uv: yuv.chroma(geom.uv_subsample)?,
        label,
        provenance: Provenance {
            image_id: "synthetic".into(),
            group,
            region: BoundingBox::new(0.0, 0.0, geom.cols as f64, geom.rows as f64, 0.0),
            deformation: Deformation::IDENTITY,
        },
    })
}

/// Window-sized RGB images alternating pedestrian and background, the
/// pedestrian centred and jittered at the context scale.
pub fn two_class_images(geom: &WindowGeometry, per_class: usize, seed: u64) -> Vec<(RgbImage, Label)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * per_class);
    for _ in 0..per_class {
        let mut img = clutter(geom.rows, geom.cols, &mut rng);
        let h = geom.rows as f64 / geom.context * rng.gen_range(0.9..1.1);
        let w = h * geom.cols as f64 / geom.rows as f64;
        let top = (geom.rows as f64 - h) / 2.0 + rng.gen_range(-1.5..1.5);
        let left = (geom.cols as f64 - w) / 2.0 + rng.gen_range(-1.5..1.5);
        draw_pedestrian(&mut img, &BoundingBox::new(left, top, w, h, 0.0), &mut rng);
        add_noise(&mut img, 0.02, &mut rng);
        out.push((img, Label::Pedestrian));
        out.push((clutter(geom.rows, geom.cols, &mut rng), Label::Background));
    }
    out
}

/// [`two_class_images`] as samples, each its own provenance group.
pub fn two_class_windows(geom: &WindowGeometry, per_class: usize, seed: u64) -> Result<Vec<SampleWindow>> {
    two_class_images(geom, per_class, seed)
        .iter()
        .enumerate()
        .map(|(i, (img, label))| window_sample(img, geom, *label, i as u64))
        .collect()
}

/// Writes a small detection dataset:
/// `train/images`, `train/annotations`, `negatives`, `test/images`,
/// `test/annotations`. Annotation files share the image file stem.
pub fn write_fixture(dir: &Path, geom: &WindowGeometry, images: usize, seed: u64) -> Result<()> {
    let h = geom.rows as f64 / geom.context;
    let (rows, cols) = ((3.0 * geom.rows as f64) as usize, (4.0 * geom.cols as f64) as usize);
    for (split, offset) in [("train", 0u64), ("test", 1_000)] {
        let img_dir = dir.join(split).join("images");
        let ann_dir = dir.join(split).join("annotations");
        std::fs::create_dir_all(&img_dir)?;
        std::fs::create_dir_all(&ann_dir)?;
        for i in 0..images {
            let scene = pedestrian_scene(rows, cols, 2, (h * 0.9, h * 1.6), geom, seed.wrapping_add(offset + i as u64));
            let name = format!("{split}_{i:03}");
            scene.image.save_png(&img_dir.join(format!("{name}.png")))?;
            let annos: Vec<Annotation> = scene.pedestrians.iter().map(|b| Annotation::new(*b)).collect();
            std::fs::write(ann_dir.join(format!("{name}.txt")), format_annotations(&annos))?;
        }
    }
    let neg_dir = dir.join("negatives");
    std::fs::create_dir_all(&neg_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(7_777));
    for i in 0..images {
        clutter(rows, cols, &mut rng).save_png(&neg_dir.join(format!("neg_{i:03}.png")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bars_are_zero_mean_and_reproducible() {
        let a = oriented_bars(5, 12, 3);
        assert_eq!(a.len(), 5);
        for x in &a {
            assert_eq!(x.shape(), (1, 12, 12));
            assert!(x.maps()[0].sum().abs() < 1e-9);
        }
        assert_eq!(a, oriented_bars(5, 12, 3));
        assert_ne!(a, oriented_bars(5, 12, 4));
    }

    #[test]
    fn scenes_place_separated_pedestrians() {
        let g = WindowGeometry::PAPER;
        let s = pedestrian_scene(300, 400, 3, (60.0, 120.0), &g, 5);
        assert!(!s.pedestrians.is_empty());
        for (i, a) in s.pedestrians.iter().enumerate() {
            assert!(a.right() <= 400.0 && a.bottom() <= 300.0);
            for b in &s.pedestrians[i + 1..] {
                assert_eq!(a.intersection(b), 0.0);
            }
        }
    }

    #[test]
    fn two_class_windows_have_window_shape() {
        let g = WindowGeometry { rows: 42, cols: 24, context: 1.4, uv_subsample: 3 };
        let w = two_class_windows(&g, 3, 1).unwrap();
        assert_eq!(w.len(), 6);
        assert_eq!(w.iter().filter(|s| s.label == Label::Pedestrian).count(), 3);
        for s in &w {
            assert_eq!(s.y.shape(), (1, 42, 24));
            assert_eq!(s.uv.shape(), (2, 14, 8));
        }
    }
}
