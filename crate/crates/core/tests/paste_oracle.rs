//! A training positive pasted into a scene is found where it was pasted.

use convpsd::dataset::{RgbImage, YuvImage};
use convpsd::detector::{detect, detect_nms, iou, BoundingBox, DetectConfig, PyramidSpec, Scoring};
use convpsd::network::{finetune, Network, NetworkSpec, TrainConfig};
use convpsd::synthetic::{clutter, two_class_images, two_class_windows};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Copies the pixels of `src` that differ from `background` by more than
/// the pixel noise, so no window border comes along.
fn paste_figure(dst: &mut RgbImage, src: &RgbImage, background: &RgbImage, top: usize, left: usize) -> usize {
    let mut copied = 0;
    for r in 0..src.rows() {
        for c in 0..src.cols() {
            let (a, b) = (src.get(r, c), background.get(r, c));
            if (0..3).any(|k| (a[k] - b[k]).abs() > 0.1) {
                dst.set(top + r, left + c, a);
                copied += 1;
            }
        }
    }
    copied
}

/// The first training positive and the clutter it was drawn over (the
/// first draw from the same seed).
fn positive(w: &convpsd::dataset::WindowGeometry) -> (RgbImage, RgbImage) {
    let img = two_class_images(w, 1, 5)[0].0.clone();
    let background = clutter(w.rows, w.cols, &mut ChaCha8Rng::seed_from_u64(5));
    (img, background)
}

fn trained() -> Network {
    let spec = NetworkSpec::small();
    let train = two_class_windows(&spec.window, 100, 5).unwrap();
    let net = Network::new(spec, 5).unwrap();
    finetune(net, &train, &TrainConfig { epochs: 5, seed: 5, ..Default::default() }).unwrap().0
}

#[test]
fn strongest_detection_covers_the_paste() {
    let net = trained();
    let w = net.spec.window;
    let stride = net.spec.detection_stride().unwrap();
    let (figure, background) = positive(&w);
    let mut scene = RgbImage::filled(120, 96, [0.0; 3]);
    for r in 0..120 {
        for c in 0..96 {
            let g = 0.3 + 0.2 * r as f64 / 120.0 + 0.1 * c as f64 / 96.0;
            scene.set(r, c, [g, g * 0.9, g * 0.8]);
        }
    }
    // cell (5, 6) of the unit-scale level
    let (top, left) = (5 * stride, 6 * stride);
    let copied = paste_figure(&mut scene, &figure, &background, top, left);
    assert!(copied > 100 && copied < w.rows * w.cols / 2, "{copied} figure pixels");
    let img = YuvImage::from_rgb(&scene);
    let window = BoundingBox::new(left as f64, top as f64, w.cols as f64, w.rows as f64, 0.0);
    let truth = w.pedestrian_box(&window);

    for scoring in [Scoring::Dense, Scoring::Windowed] {
        let cfg = DetectConfig {
            threshold: 0.0,
            pyramid: PyramidSpec { up_ratio: 1.0, ..Default::default() },
            scoring,
            ..Default::default()
        };
        let boxes = detect(&net, &img, &cfg).unwrap();
        let best = boxes.iter().copied().max_by(|a, b| a.score.total_cmp(&b.score)).unwrap();
        assert!(iou(&best, &truth) > 0.5, "{scoring:?}: best {best:?} vs paste {truth:?}");
        assert!(best.score > 0.5, "{scoring:?}: best score {}", best.score);
        for b in &boxes {
            assert!((b.width / b.height - w.cols as f64 / w.rows as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn default_pyramid_still_detects_the_paste() {
    let net = trained();
    let w = net.spec.window;
    let (figure, background) = positive(&w);
    let mut scene = clutter(120, 96, &mut ChaCha8Rng::seed_from_u64(99));
    paste_figure(&mut scene, &figure, &background, 30, 36);
    let truth = w.pedestrian_box(&BoundingBox::new(36.0, 30.0, w.cols as f64, w.rows as f64, 0.0));
    let found = detect_nms(&net, &YuvImage::from_rgb(&scene), &DetectConfig::default()).unwrap();
    assert!(found.iter().any(|b| iou(b, &truth) > 0.5), "{found:?}");
}

#[test]
fn impossible_threshold_gives_nothing() {
    let net = trained();
    let scene = clutter(80, 60, &mut ChaCha8Rng::seed_from_u64(1));
    let cfg = DetectConfig { threshold: 1.0, ..Default::default() };
    assert!(detect(&net, &YuvImage::from_rgb(&scene), &cfg).unwrap().is_empty());
}
