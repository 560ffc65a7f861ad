//! Windows and images read from a dataset directory laid out as
//! `train/images`, `train/annotations`, `negatives`, `test/images`,
//! `test/annotations`, with annotation files named after the image stem.

use std::path::Path;

use convpsd::dataset::{
    augment, extract_window, image_id, list_images, sample_negatives, AugmentConfig, Label, RgbImage, SampleWindow,
    WindowGeometry, YuvImage,
};
use convpsd::detector::PyramidSpec;
use convpsd::evaluation::parse_annotations;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::require_dir;
use crate::error::CliError;

pub fn load_yuv(path: &Path) -> Result<YuvImage, CliError> {
    Ok(YuvImage::from_rgb(&RgbImage::load(path)?))
}

/// Images of a directory, or a single image file, with their ids.
pub fn load_images(path: &Path) -> Result<Vec<(String, YuvImage)>, CliError> {
    let paths = if path.is_file() { vec![path.to_path_buf()] } else { list_images(&require_dir(path, "image")?)? };
    paths.iter().map(|p| Ok((image_id(p), load_yuv(p)?))).collect()
}

/// One window per non-ignored annotation, each its own provenance group,
/// expanded by `augment` when given.
pub fn positive_windows(
    split: &Path,
    geom: &WindowGeometry,
    augmentation: Option<&AugmentConfig>,
    seed: u64,
) -> Result<Vec<SampleWindow>, CliError> {
    let images = require_dir(&split.join("images"), "image")?;
    let annotations = require_dir(&split.join("annotations"), "annotation")?;
    let mut out = Vec::new();
    let mut group = 0u64;
    for path in list_images(&images)? {
        let id = image_id(&path);
        let anno_path = annotations.join(format!("{id}.txt"));
        let text = std::fs::read_to_string(&anno_path)
            .map_err(|e| CliError::Data(format!("annotations for image {id} ({}): {e}", anno_path.display())))?;
        let annos = parse_annotations(&text)?;
        let img = load_yuv(&path)?;
        for a in annos.iter().filter(|a| !a.ignore) {
            let w = extract_window(&img, &a.bbox, geom, Label::Pedestrian, &id, group)?;
            match augmentation {
                Some(cfg) => out.extend(augment(&w, cfg, geom.uv_subsample, seed.wrapping_mul(1_000_003).wrapping_add(group))),
                None => out.push(w),
            }
            group += 1;
        }
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("no pedestrian annotations under {}", split.display())));
    }
    Ok(out)
}

/// `per_image` random windows from every negative image, over the
/// detection pyramid's scales.
pub fn negative_windows(
    images: &[(String, YuvImage)],
    per_image: usize,
    geom: &WindowGeometry,
    pyramid: &PyramidSpec,
    seed: u64,
) -> Result<Vec<SampleWindow>, CliError> {
    let mut out = Vec::new();
    for (i, (id, img)) in images.iter().enumerate() {
        let scales = pyramid.scales(img.rows(), img.cols(), geom);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        out.extend(sample_negatives(img, id, per_image, geom, &scales, &mut rng)?);
    }
    Ok(out)
}
