//! A slow, independently written ISTA on the convolutional sparse coding
//! energy.

use convpsd::sparse_coding::{fista_infer, ConnectionTable, FistaConfig, KernelBank};
use convpsd::{FeatureMaps, Plane};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub x: Vec<Vec<f64>>,
    pub filters: Vec<Vec<Vec<f64>>>,
    pub lambda: f64,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..8).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let filters = (0..4)
        .map(|_| (0..3).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
        .collect();
    Instance { x, filters, lambda: 0.5 }
}

/// Plain loops; shares nothing with the library's convolution code.
fn recon(inst: &Instance, z: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; 8]; 8];
    for (j, f) in inst.filters.iter().enumerate() {
        for r in 0..6 {
            for c in 0..6 {
                for u in 0..3 {
                    for v in 0..3 {
                        out[r + u][c + v] += f[u][v] * z[j][r][c];
                    }
                }
            }
        }
    }
    out
}

fn objective(inst: &Instance, z: &[Vec<Vec<f64>>]) -> f64 {
    let rec = recon(inst, z);
    let mut e = 0.0;
    for r in 0..8 {
        for c in 0..8 {
            e += (inst.x[r][c] - rec[r][c]).powi(2);
        }
    }
    e + inst.lambda * z.iter().flatten().flatten().map(|v| v.abs()).sum::<f64>()
}

pub fn ista(inst: &Instance, iters: usize) -> f64 {
    // ||A||^2 <= sum_j ||D_j||_1^2, so this step is always safe
    let bound: f64 = inst.filters.iter().map(|f| f.iter().flatten().map(|v| v.abs()).sum::<f64>().powi(2)).sum();
    let step = 1.0 / (2.0 * bound);
    let mut z = vec![vec![vec![0.0; 6]; 6]; 4];
    for _ in 0..iters {
        let rec = recon(inst, &z);
        for (j, f) in inst.filters.iter().enumerate() {
            for r in 0..6 {
                for c in 0..6 {
                    let mut g = 0.0;
                    for u in 0..3 {
                        for v in 0..3 {
                            g += -2.0 * (inst.x[r + u][c + v] - rec[r + u][c + v]) * f[u][v];
                        }
                    }
                    let w = z[j][r][c] - step * g;
                    let t = step * inst.lambda;
                    z[j][r][c] = if w > t { w - t } else if w < -t { w + t } else { 0.0 };
                }
            }
        }
    }
    objective(inst, &z)
}

pub fn fista_objective(inst: &Instance, cfg: &FistaConfig) -> f64 {
    let x = FeatureMaps::single(Plane::from_fn(8, 8, |r, c| inst.x[r][c]));
    let dict = KernelBank::new(
        inst.filters.iter().map(|f| Plane::from_fn(3, 3, |u, v| f[u][v])).collect(),
    )
    .unwrap();
    let table = ConnectionTable::full(1, 4);
    fista_infer(&x, &dict, &table, inst.lambda, cfg).unwrap().objective
}
