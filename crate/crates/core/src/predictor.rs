//! Feed-forward encoder `z~_j = g_j * tanh(sum_{i in P_j} x_i (*) k_ji + b_j)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::signal::{accumulate_full, accumulate_valid, FeatureMaps, Plane};
use crate::sparse_coding::{ConnectionTable, KernelBank};

/// Kernels per table edge plus one gain and one bias per output map.
/// Gradients use the same shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorParams {
    pub kernels: KernelBank,
    pub gains: Vec<f64>,
    pub biases: Vec<f64>,
}

impl PredictorParams {
    /// Kernels uniform in `+-1/sqrt(fan_in * m^2)`, unit gains, zero biases.
    pub fn init(table: &ConnectionTable, m: usize, rng: &mut impl Rng) -> Self {
        let mut kernels = Vec::with_capacity(table.edge_count());
        for &(_, j) in table.edges() {
            let fan_in = table.edges_into(j).len();
            let bound = 1.0 / ((fan_in * m * m) as f64).sqrt();
            kernels.push(Plane::from_fn(m, m, |_, _| rng.gen_range(-bound..=bound)));
        }
        PredictorParams {
            kernels: KernelBank::new(kernels).expect("uniform sizes"),
            gains: vec![1.0; table.outputs()],
            biases: vec![0.0; table.outputs()],
        }
    }

    pub fn zeros_like(&self) -> Self {
        PredictorParams {
            kernels: KernelBank::zeros(self.kernels.len(), self.kernels.size()),
            gains: vec![0.0; self.gains.len()],
            biases: vec![0.0; self.biases.len()],
        }
    }

    pub fn outputs(&self) -> usize {
        self.gains.len()
    }

    pub fn axpy(&mut self, alpha: f64, other: &PredictorParams) -> Result<()> {
        if self.gains.len() != other.gains.len() || self.biases.len() != other.biases.len() {
            return dim_err("predictor parameter length mismatch");
        }
        self.kernels.axpy(alpha, &other.kernels)?;
        for (a, b) in self.gains.iter_mut().zip(&other.gains) {
            *a += alpha * b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.kernels.is_finite()
            && self.gains.iter().all(|v| v.is_finite())
            && self.biases.iter().all(|v| v.is_finite())
    }

    fn check(&self, table: &ConnectionTable) -> Result<()> {
        self.kernels.check_table(table)?;
        if self.gains.len() != table.outputs() || self.biases.len() != table.outputs() {
            return dim_err(format!(
                "{} gains / {} biases for {} outputs",
                self.gains.len(),
                self.biases.len(),
                table.outputs()
            ));
        }
        Ok(())
    }
}

/// Forward intermediates kept for backpropagation.
#[derive(Clone, Debug)]
pub struct PredictorTrace {
    /// `tanh` of the pre-activation, per output map.
    pub activation: FeatureMaps,
}

pub fn predict(x: &FeatureMaps, table: &ConnectionTable, params: &PredictorParams) -> Result<FeatureMaps> {
    predict_traced(x, table, params).map(|(z, _)| z)
}

pub fn predict_traced(
    x: &FeatureMaps,
    table: &ConnectionTable,
    params: &PredictorParams,
) -> Result<(FeatureMaps, PredictorTrace)> {
    params.check(table)?;
    if x.count() != table.inputs() {
        return dim_err(format!("{} input maps for a table with {} inputs", x.count(), table.inputs()));
    }
    let m = params.kernels.size();
    if m == 0 || m > x.rows() || m > x.cols() {
        return dim_err(format!("kernel {m}x{m} does not fit inputs {}x{}", x.rows(), x.cols()));
    }
    let (oh, ow) = (x.rows() - m + 1, x.cols() - m + 1);
    let mut acts = Vec::with_capacity(table.outputs());
    let mut outs = Vec::with_capacity(table.outputs());
    for j in 0..table.outputs() {
        let mut pre = Plane::filled(oh, ow, params.biases[j]);
        for &e in table.edges_into(j) {
            let i = table.edges()[e].0;
            accumulate_valid(&mut pre, &x.maps()[i], params.kernels.get(e))?;
        }
        let act = pre.map(f64::tanh);
        let g = params.gains[j];
        outs.push(act.map(|t| g * t));
        acts.push(act);
    }
    Ok((FeatureMaps::new(outs)?, PredictorTrace { activation: FeatureMaps::new(acts)? }))
}

/// Squared Frobenius distance between optimal and predicted codes.
pub fn energy_pred(z_star: &FeatureMaps, z_pred: &FeatureMaps) -> Result<f64> {
    if z_star.shape() != z_pred.shape() {
        return dim_err(format!("code shapes differ: {:?} vs {:?}", z_star.shape(), z_pred.shape()));
    }
    let mut acc = 0.0;
    for (a, b) in z_star.maps().iter().zip(z_pred.maps()) {
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            acc += (u - v) * (u - v);
        }
    }
    Ok(acc)
}

/// Backpropagates `d_out` (gradient w.r.t. the predictor output) to the
/// parameters and, if requested, to the input maps.
pub fn backward(
    x: &FeatureMaps,
    table: &ConnectionTable,
    params: &PredictorParams,
    trace: &PredictorTrace,
    d_out: &FeatureMaps,
    want_input_grad: bool,
) -> Result<(PredictorParams, Option<FeatureMaps>)> {
    if d_out.shape() != trace.activation.shape() {
        return dim_err("output gradient does not match predictor output");
    }
    let m = params.kernels.size();
    let mut grad = params.zeros_like();
    let mut d_pre = Vec::with_capacity(table.outputs());
    for j in 0..table.outputs() {
        let act = &trace.activation.maps()[j];
        let dz = &d_out.maps()[j];
        grad.gains[j] = act.dot(dz)?;
        let g = params.gains[j];
        let da = act.zip_map(dz, |t, d| d * g * (1.0 - t * t))?;
        grad.biases[j] = da.sum();
        d_pre.push(da);
    }
    for (e, &(i, j)) in table.edges().iter().enumerate() {
        let mut gk = Plane::zeros(m, m);
        accumulate_valid(&mut gk, &x.maps()[i], &d_pre[j])?;
        grad.kernels.kernels_mut()[e] = gk;
    }
    let dx = if want_input_grad {
        let mut maps = Vec::with_capacity(table.inputs());
        for i in 0..table.inputs() {
            let mut acc = Plane::zeros(x.rows(), x.cols());
            for &e in table.edges_from(i) {
                let j = table.edges()[e].1;
                accumulate_full(&mut acc, &d_pre[j], params.kernels.get(e))?;
            }
            maps.push(acc);
        }
        Some(FeatureMaps::new(maps)?)
    } else {
        None
    };
    Ok((grad, dx))
}

/// Gradient of `energy_pred(z_star, predict(x))` with respect to `(g, k, b)`.
pub fn grad_predictor(
    x: &FeatureMaps,
    z_star: &FeatureMaps,
    table: &ConnectionTable,
    params: &PredictorParams,
) -> Result<PredictorParams> {
    let (z, trace) = predict_traced(x, table, params)?;
    if z.shape() != z_star.shape() {
        return dim_err(format!("code shapes differ: {:?} vs {:?}", z_star.shape(), z.shape()));
    }
    let maps = z
        .maps()
        .iter()
        .zip(z_star.maps())
        .map(|(p, s)| p.zip_map(s, |a, b| 2.0 * (a - b)))
        .collect::<Result<Vec<_>>>()?;
    let d_out = FeatureMaps::new(maps)?;
    Ok(backward(x, table, params, &trace, &d_out, false)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_stack(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> FeatureMaps {
        let maps = (0..n).map(|_| Plane::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0))).collect();
        FeatureMaps::new(maps).unwrap()
    }

    fn random_params(rng: &mut ChaCha8Rng, table: &ConnectionTable, m: usize) -> PredictorParams {
        let mut p = PredictorParams::init(table, m, rng);
        for g in &mut p.gains {
            *g = rng.gen_range(0.5..2.0);
        }
        for b in &mut p.biases {
            *b = rng.gen_range(-0.5..0.5);
        }
        p
    }

    fn visit(p: &mut PredictorParams, mut f: impl FnMut(&mut f64)) {
        for k in p.kernels.kernels_mut() {
            k.as_mut_slice().iter_mut().for_each(&mut f);
        }
        p.gains.iter_mut().for_each(&mut f);
        p.biases.iter_mut().for_each(&mut f);
    }

    #[test]
    fn delta_kernel_gives_tanh() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_stack(&mut rng, 1, 4, 5);
        let table = ConnectionTable::full(1, 1);
        let p = PredictorParams {
            kernels: KernelBank::new(vec![Plane::scalar(1.0)]).unwrap(),
            gains: vec![1.0],
            biases: vec![0.0],
        };
        let z = predict(&x, &table, &p).unwrap();
        assert_eq!(z, x.map(f64::tanh));
    }

    #[test]
    fn zero_gain_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_stack(&mut rng, 2, 6, 6);
        let table = ConnectionTable::full(2, 3);
        let mut p = PredictorParams::init(&table, 3, &mut rng);
        p.gains = vec![0.0; 3];
        let z = predict(&x, &table, &p).unwrap();
        assert!(z.flatten().iter().all(|&v| v == 0.0));
        assert_eq!(z.shape(), (3, 4, 4));
    }

    #[test]
    fn scalar_formula() {
        let table = ConnectionTable::full(1, 1);
        let p = PredictorParams {
            kernels: KernelBank::new(vec![Plane::scalar(2.0)]).unwrap(),
            gains: vec![2.0],
            biases: vec![-1.0],
        };
        let z = predict(&FeatureMaps::single(Plane::scalar(1.0)), &table, &p).unwrap();
        assert!((z.maps()[0][(0, 0)] - 1.523188).abs() < 1e-6);
        assert_eq!(z.maps()[0][(0, 0)], 2.0 * 1f64.tanh());
    }

    #[test]
    fn energy_pred_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_stack(&mut rng, 2, 3, 4);
        assert_eq!(energy_pred(&a, &a).unwrap(), 0.0);
        let zero = FeatureMaps::zeros(2, 3, 4);
        assert!((energy_pred(&zero, &a).unwrap() - a.norm_sq()).abs() < 1e-15);
        let b = rand_stack(&mut rng, 2, 3, 4);
        let mut oracle = 0.0;
        for (pa, pb) in a.maps().iter().zip(b.maps()) {
            for r in 0..3 {
                for c in 0..4 {
                    oracle += (pa[(r, c)] - pb[(r, c)]).powi(2);
                }
            }
        }
        assert!((energy_pred(&a, &b).unwrap() - oracle).abs() < 1e-12);
        assert!(energy_pred(&a, &FeatureMaps::zeros(2, 4, 3)).is_err());
    }

    #[test]
    fn gradient_vanishes_at_fixed_point_and_on_zero_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let table = ConnectionTable::full(2, 2);
        let p = random_params(&mut rng, &table, 3);
        let x = rand_stack(&mut rng, 2, 6, 6);
        let z = predict(&x, &table, &p).unwrap();
        let g = grad_predictor(&x, &z, &table, &p).unwrap();
        assert_eq!(g.kernels.norm_sq(), 0.0);
        assert!(g.gains.iter().chain(&g.biases).all(|&v| v == 0.0));

        let mut p0 = p.clone();
        p0.biases = vec![0.0; 2];
        let x0 = FeatureMaps::zeros(2, 6, 6);
        let target = rand_stack(&mut rng, 2, 4, 4);
        let g = grad_predictor(&x0, &target, &table, &p0).unwrap();
        assert_eq!(g.kernels.norm_sq(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let table = ConnectionTable::new(3, 2, vec![(0, 0), (1, 0), (1, 1), (2, 1)]).unwrap();
            let p = random_params(&mut rng, &table, 3);
            let x = rand_stack(&mut rng, 3, 5, 6);
            let target = rand_stack(&mut rng, 2, 3, 4);
            let mut g = grad_predictor(&x, &target, &table, &p).unwrap();
            let mut analytic = Vec::new();
            visit(&mut g, |v| analytic.push(*v));
            let n = analytic.len();
            let h = 1e-5;
            for idx in 0..n {
                let eval = |delta: f64| {
                    let mut q = p.clone();
                    let mut k = 0;
                    visit(&mut q, |v| {
                        if k == idx {
                            *v += delta;
                        }
                        k += 1;
                    });
                    energy_pred(&target, &predict(&x, &table, &q).unwrap()).unwrap()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = analytic[idx];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7);
                assert!(rel < 1e-6, "param {idx}: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let table = ConnectionTable::full(2, 3);
        let p = random_params(&mut rng, &table, 2);
        let x = rand_stack(&mut rng, 2, 4, 4);
        let w = rand_stack(&mut rng, 3, 3, 3);
        let (_, trace) = predict_traced(&x, &table, &p).unwrap();
        let (_, dx) = backward(&x, &table, &p, &trace, &w, true).unwrap();
        let dx = dx.unwrap().flatten();
        let flat = x.flatten();
        for idx in 0..flat.len() {
            let f = |d: f64| {
                let mut v = flat.clone();
                v[idx] += d;
                let xs = FeatureMaps::from_flat(2, 4, 4, &v).unwrap();
                predict(&xs, &table, &p).unwrap().dot(&w).unwrap()
            };
            let fd = (f(1e-5) - f(-1e-5)) / 2e-5;
            assert!((fd - dx[idx]).abs() < 1e-7 * fd.abs().max(1.0));
        }
    }

    proptest::proptest! {
        #[test]
        fn output_bounded_by_gain(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let table = ConnectionTable::full(2, 3);
            let mut p = random_params(&mut rng, &table, 3);
            for k in p.kernels.kernels_mut() {
                k.scale(20.0);
            }
            let x = rand_stack(&mut rng, 2, 6, 6);
            let z = predict(&x, &table, &p).unwrap();
            for (j, m) in z.maps().iter().enumerate() {
                for &v in m.as_slice() {
                    proptest::prop_assert!(v.abs() <= p.gains[j].abs());
                }
            }
        }

        #[test]
        fn output_is_continuous_in_parameters(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let table = ConnectionTable::full(1, 2);
            let p = random_params(&mut rng, &table, 3);
            let x = rand_stack(&mut rng, 1, 5, 5);
            let base = predict(&x, &table, &p).unwrap().flatten();
            let eps = 1e-6;
            let mut q = p.clone();
            q.kernels.kernels_mut()[0].as_mut_slice()[4] += eps;
            q.gains[1] += eps;
            q.biases[0] -= eps;
            let moved = predict(&x, &table, &q).unwrap().flatten();
            let max_change = base.iter().zip(&moved).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            proptest::prop_assert!(max_change / eps < 10.0);
        }
    }
}
