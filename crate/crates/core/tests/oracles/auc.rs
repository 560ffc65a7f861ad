//! Exact areas under piecewise-linear curves on a dyadic grid.

use rand::Rng;

/// Grid denominator: coordinates are `k / GRID`.
pub const GRID: i64 = 64;

/// A curve through integer grid points `(x, y)` with `x` non-decreasing
/// in `[0, GRID]` and `y` in `[0, GRID]`.
pub fn random_grid_curve(rng: &mut impl Rng, points: usize) -> Vec<(i64, i64)> {
    let mut xs: Vec<i64> = (0..points).map(|_| rng.gen_range(0..=GRID)).collect();
    xs.sort();
    xs.into_iter().map(|x| (x, rng.gen_range(0..=GRID))).collect()
}

/// `2 * GRID^2` times the area over `[0, 1]` of the curve extended flat at
/// both ends, in integers.
pub fn doubled_area(curve: &[(i64, i64)]) -> i64 {
    let mut pts = vec![(0, curve[0].1)];
    pts.extend_from_slice(curve);
    pts.push((GRID, curve[curve.len() - 1].1));
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum()
}

pub fn exact_area(curve: &[(i64, i64)]) -> f64 {
    doubled_area(curve) as f64 / (2 * GRID * GRID) as f64
}

pub fn to_unit(curve: &[(i64, i64)]) -> Vec<(f64, f64)> {
    curve.iter().map(|&(x, y)| (x as f64 / GRID as f64, y as f64 / GRID as f64)).collect()
}

/// Two DET step curves that the nine-point average and the integral rank
/// in opposite orders: `sharp` stays at miss 1 through the first three
/// reference FPPIs and then drops to 0.2, `flat` sits at 0.35 throughout.
pub fn reranking_pair() -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let sharp = vec![(0.0, 1.0), (0.0316, 1.0), (0.0317, 0.2), (1.0, 0.2)];
    let flat = vec![(0.0, 0.35), (1.0, 0.35)];
    (sharp, flat)
}
