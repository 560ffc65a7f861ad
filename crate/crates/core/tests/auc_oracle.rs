//! Areas against exact integer integration, and the nine-point average
//! against the integral.

mod oracles;

use convpsd::evaluation::{auc_continuous, auc_discrete9, DetCurve, REFERENCE_FPPI};
use oracles::auc::{exact_area, random_grid_curve, reranking_pair, to_unit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn piecewise_linear_areas_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa0c);
    let mut worst: f64 = 0.0;
    for n in 1..=30 {
        for _ in 0..100 {
            let c = random_grid_curve(&mut rng, n);
            let got = auc_continuous(&DetCurve::from_pairs(&to_unit(&c)), 0.0, 1.0);
            worst = worst.max((got - exact_area(&c)).abs());
        }
    }
    assert!(worst < 1e-12, "worst error {worst:e}");
}

#[test]
fn hand_integrated_shapes() {
    let area = |p: &[(f64, f64)]| auc_continuous(&DetCurve::from_pairs(p), 0.0, 1.0);
    assert_eq!(area(&[(0.0, 0.3), (1.0, 0.3)]), 0.3);
    assert_eq!(area(&[(0.0, 1.0), (1.0, 0.0)]), 0.5);
    assert!((area(&[(0.0, 1.0), (0.5, 0.2), (1.0, 0.2)]) - 0.4).abs() < 1e-15);
}

#[test]
fn nine_point_average_examples() {
    let step = DetCurve::from_pairs(&[(0.0, 1.0), (0.02, 0.0)]);
    assert!((auc_discrete9(&step) - 2.0 / 9.0).abs() < 1e-15);
    // a straight line sampled at the reference points
    let line: Vec<(f64, f64)> = std::iter::once((0.0, 1.0)).chain(REFERENCE_FPPI.iter().map(|&f| (f, 1.0 - f))).collect();
    let line = DetCurve::from_pairs(&line);
    let want = REFERENCE_FPPI.iter().map(|f| 1.0 - f).sum::<f64>() / 9.0;
    assert!((auc_discrete9(&line) - want).abs() < 1e-15);
    assert!(auc_discrete9(&line) - auc_continuous(&line, 0.0, 1.0) > 0.2);
}

#[test]
fn the_two_areas_rank_the_step_pair_oppositely() {
    let (sharp, flat) = reranking_pair();
    let (sharp, flat) = (DetCurve::from_pairs(&sharp), DetCurve::from_pairs(&flat));
    let (cs, cf) = (auc_continuous(&sharp, 0.0, 1.0), auc_continuous(&flat, 0.0, 1.0));
    let (ds, df) = (auc_discrete9(&sharp), auc_discrete9(&flat));
    assert!((ds - cs).abs() > 0.05, "discrete {ds} continuous {cs}");
    assert!(cs < cf && ds > df, "continuous {cs} vs {cf}, discrete {ds} vs {df}");
}
