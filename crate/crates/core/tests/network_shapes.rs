//! Closed-form shapes against real forward passes.

use convpsd::dataset::WindowGeometry;
use convpsd::network::{Network, NetworkSpec};
use convpsd::signal::pooled_len;
use convpsd::{FeatureMaps, Plane};

fn window_maps(net: &Network, seed: u64) -> (FeatureMaps, FeatureMaps) {
    let w = net.spec.window;
    let (ur, uc) = w.uv_shape();
    let v = |r: usize, c: usize, k: u64| (((r * 31 + c * 17) as u64 + seed * 7 + k) % 13) as f64 / 13.0 - 0.4;
    let y = FeatureMaps::single(Plane::from_fn(w.rows, w.cols, |r, c| v(r, c, 0)));
    let uv = FeatureMaps::new(vec![
        Plane::from_fn(ur, uc, |r, c| v(r, c, 1) * 0.3),
        Plane::from_fn(ur, uc, |r, c| v(r, c, 2) * 0.3),
    ])
    .unwrap();
    (y, uv)
}

#[test]
fn paper_network_produces_17824_features() {
    let net = Network::new(NetworkSpec::paper(), 1).unwrap();
    let (y, uv) = window_maps(&net, 0);
    assert_eq!(net.stage1(&y, &uv).unwrap().shape(), (38, 40, 24));
    let (p, f) = net.forward(&y, &uv).unwrap();
    assert_eq!(f.len(), 17824);
    let g = net.geometry();
    assert_eq!((g.stage2_dim, g.branch_dim), (8704, 9120));
    assert_eq!(g.stage2_pooled, (68, 16, 8));
    assert_eq!(g.branch, (38, 20, 12));
    assert!(p > 0.0 && p < 1.0);
    // 20% of 38 x 68 connections removed
    assert_eq!(net.stage2.table.edge_count(), 2584 - (0.2f64 * 2584.0).round() as usize);
}

#[test]
fn single_stage_paper_network_has_8704_features() {
    let mut spec = NetworkSpec::paper();
    spec.multi_stage = false;
    assert_eq!(spec.geometry().unwrap().classifier_dim, 8704);
}

/// Closed form of every shape for a window of `rows x cols`.
fn closed_form(spec: &NetworkSpec, rows: usize, cols: usize) -> Option<((usize, usize, usize), usize)> {
    let conv = |n: usize, k: usize| n.checked_sub(k - 1).filter(|&v| v > 0);
    let stage = |n: usize, s: &convpsd::network::StageSpec| conv(n, s.kernel).and_then(|c| pooled_len(c, s.pool.size, s.pool.stride));
    let (yr, yc) = (stage(rows, &spec.y)?, stage(cols, &spec.y)?);
    let u = spec.window.uv_subsample;
    let (ur, uc) = (stage(rows / u, &spec.uv)?, stage(cols / u, &spec.uv)?);
    if ur > yr || uc > yc {
        return None;
    }
    let (sr, sc) = (stage(yr, &spec.stage2)?, stage(yc, &spec.stage2)?);
    let b = spec.branch_pool;
    let (br, bc) = (pooled_len(yr, b.size, b.stride)?, pooled_len(yc, b.size, b.stride)?);
    let stage1 = (spec.y.maps + spec.uv.maps, yr, yc);
    Some((stage1, spec.stage2.maps * sr * sc + stage1.0 * br * bc))
}

#[test]
fn shapes_follow_the_closed_form_on_a_grid() {
    let mut checked = 0;
    for base in [NetworkSpec::tiny(), NetworkSpec::small()] {
        let (r0, c0) = (base.window.rows, base.window.cols);
        for rows in (r0 - 4)..=(r0 + 9) {
            for cols in (c0 - 4)..=(c0 + 9) {
                let mut spec = base.clone();
                spec.window = WindowGeometry { rows, cols, ..base.window };
                let expected = closed_form(&spec, rows, cols);
                match (spec.geometry(), expected) {
                    (Ok(g), Some((stage1, dim))) => {
                        assert_eq!((g.stage1, g.classifier_dim), (stage1, dim), "{rows}x{cols}");
                        let net = Network::new(spec, 3).unwrap();
                        let (y, uv) = window_maps(&net, rows as u64);
                        assert_eq!(net.stage1(&y, &uv).unwrap().shape(), stage1);
                        assert_eq!(net.features(&y, &uv).unwrap().len(), dim);
                        checked += 1;
                    }
                    (Err(_), None) => {}
                    (got, want) => panic!("{rows}x{cols}: geometry {got:?} but closed form {want:?}"),
                }
            }
        }
    }
    assert!(checked > 100, "only {checked} valid sizes");
}
