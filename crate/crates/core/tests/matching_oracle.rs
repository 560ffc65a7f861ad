//! Greedy matching, ignore regions and the DET sweep.

mod oracles;

use convpsd::detector::BoundingBox;
use convpsd::evaluation::{det_curve, match_detections, Annotation, ImageEval, MatchLabel, MATCH_OVERLAP};
use oracles::boxes::{match_reference, random_rect, Label, Rect};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bbox(r: &Rect, score: f64) -> BoundingBox {
    BoundingBox::new(r[0], r[1], r[2], r[3], score)
}

fn convert(l: MatchLabel) -> Label {
    match l {
        MatchLabel::TruePositive => Label::Tp,
        MatchLabel::FalsePositive => Label::Fp,
        MatchLabel::Ignored => Label::Ignored,
    }
}

/// Detections jittered around the annotations so that matches happen.
fn scenario(rng: &mut ChaCha8Rng, dets: usize, annos: usize) -> (Vec<Rect>, Vec<f64>, Vec<Rect>, Vec<bool>) {
    let a: Vec<Rect> = (0..annos).map(|_| random_rect(rng, 40.0)).collect();
    let ignore: Vec<bool> = (0..annos).map(|_| rng.gen_bool(0.3)).collect();
    let d: Vec<Rect> = (0..dets)
        .map(|_| {
            if rng.gen_bool(0.7) {
                let b = a[rng.gen_range(0..annos)];
                let j = |rng: &mut ChaCha8Rng| rng.gen_range(-2.0..2.0);
                [b[0] + j(rng), b[1] + j(rng), b[2], b[3]]
            } else {
                random_rect(rng, 40.0)
            }
        })
        .collect();
    let scores = (0..dets).map(|_| rng.gen_range(0..5) as f64 / 5.0).collect();
    (d, scores, a, ignore)
}

#[test]
fn greedy_matching_equals_the_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d61);
    let mut seen = [0usize; 3];
    for trial in 0..2000 {
        let (d, s, a, ig) = scenario(&mut rng, 10, 5);
        let dets: Vec<BoundingBox> = d.iter().zip(&s).map(|(r, &v)| bbox(r, v)).collect();
        let annos: Vec<Annotation> = a
            .iter()
            .zip(&ig)
            .map(|(r, &i)| if i { Annotation::ignored(bbox(r, 0.0)) } else { Annotation::new(bbox(r, 0.0)) })
            .collect();
        let got: Vec<Label> = match_detections(&dets, &annos, MATCH_OVERLAP).labels.into_iter().map(convert).collect();
        let want = match_reference(&d, &s, &a, &ig, MATCH_OVERLAP);
        assert_eq!(got, want, "trial {trial}");
        for l in want {
            seen[l as usize] += 1;
        }
    }
    // the scenarios exercise every outcome
    assert!(seen.iter().all(|&n| n > 100), "{seen:?}");
}

fn arb_rect() -> impl Strategy<Value = Rect> {
    (0.0..50.0f64, 0.0..50.0f64, 2.0..30.0f64, 2.0..30.0f64).prop_map(|(l, t, w, h)| [l, t, w, h])
}

fn image(dets: &[(Rect, f64)], annos: &[Rect], ignores: &[Rect]) -> ImageEval {
    ImageEval {
        image_id: "i".into(),
        detections: dets.iter().map(|(r, s)| bbox(r, *s)).collect(),
        annotations: annos
            .iter()
            .map(|r| Annotation::new(bbox(r, 0.0)))
            .chain(ignores.iter().map(|r| Annotation::ignored(bbox(r, 0.0))))
            .collect(),
    }
}

proptest! {
    #[test]
    fn ignore_regions_never_add_false_positives(
        dets in prop::collection::vec((arb_rect(), 0.0..1.0f64), 0..12),
        annos in prop::collection::vec(arb_rect(), 1..5),
        extra in prop::collection::vec(arb_rect(), 1..4),
    ) {
        let fp = |img: &ImageEval| {
            match_detections(&img.detections, &img.annotations, MATCH_OVERLAP)
                .labels.iter().filter(|&&l| l == MatchLabel::FalsePositive).count()
        };
        let base = image(&dets, &annos, &[]);
        let more = image(&dets, &annos, &extra);
        prop_assert!(fp(&more) <= fp(&base));
        // and the true positives are untouched
        let tp = |img: &ImageEval| match_detections(&img.detections, &img.annotations, MATCH_OVERLAP).hits;
        prop_assert_eq!(&tp(&more)[..annos.len()], &tp(&base)[..]);
    }

    #[test]
    fn det_curve_depends_only_on_score_ranking(
        dets in prop::collection::vec((arb_rect(), 0.0..1.0f64), 1..12),
        annos in prop::collection::vec(arb_rect(), 1..5),
    ) {
        let a = image(&dets, &annos, &[]);
        let warped: Vec<(Rect, f64)> = dets.iter().map(|(r, s)| (*r, (3.0 * s).exp() - 7.0)).collect();
        let b = image(&warped, &annos, &[]);
        let (ca, cb) = (det_curve(&[a], 0.5).unwrap(), det_curve(&[b], 0.5).unwrap());
        let strip = |c: &convpsd::evaluation::DetCurve| c.points.iter().map(|p| (p.fppi, p.miss_rate)).collect::<Vec<_>>();
        prop_assert_eq!(strip(&ca), strip(&cb));
    }

    #[test]
    fn no_annotation_is_matched_twice(
        dets in prop::collection::vec((arb_rect(), 0.0..1.0f64), 0..12),
        annos in prop::collection::vec(arb_rect(), 1..5),
    ) {
        let img = image(&dets, &annos, &[]);
        let m = match_detections(&img.detections, &img.annotations, MATCH_OVERLAP);
        let tps = m.labels.iter().filter(|&&l| l == MatchLabel::TruePositive).count();
        prop_assert_eq!(tps, m.hits.iter().filter(|&&h| h).count());
        prop_assert!(tps <= annos.len());
    }
}
