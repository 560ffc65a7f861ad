//! Convolutional sparse coding with connection tables.
//!
//! Codes for a layer with `m x m` filters on `p x q` inputs are
//! `(p-m+1) x (q-m+1)` maps; input map `i` is reconstructed as the sum over
//! its connected codes `j` of the full-mode placement of `z_j` through
//! `D_ij`. The energy has no 1/2 factor on the reconstruction term.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::signal::{accumulate_full, accumulate_valid, FeatureMaps, Kernel2D, Plane};

/// Bipartite wiring between `inputs` input maps and `outputs` output maps.
///
/// Edges are kept sorted by `(output, input)` so that every kernel bank
/// indexed by edge groups filters by the output they feed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct ConnectionTable {
    inputs: usize,
    outputs: usize,
    edges: Vec<(usize, usize)>,
    by_output: Vec<Vec<usize>>,
    by_input: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    inputs: usize,
    outputs: usize,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<TableRepr> for ConnectionTable {
    type Error = Error;
    fn try_from(r: TableRepr) -> Result<Self> {
        ConnectionTable::new(r.inputs, r.outputs, r.edges)
    }
}

impl From<ConnectionTable> for TableRepr {
    fn from(t: ConnectionTable) -> Self {
        TableRepr { inputs: t.inputs, outputs: t.outputs, edges: t.edges }
    }
}

impl ConnectionTable {
    /// Builds a table from `(input, output)` pairs. Every input and every
    /// output must take part in at least one edge.
    pub fn new(inputs: usize, outputs: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::Config("connection table needs inputs and outputs".into()));
        }
        if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i >= inputs || j >= outputs) {
            return Err(Error::Config(format!(
                "edge ({i},{j}) outside {inputs} inputs x {outputs} outputs"
            )));
        }
        edges.sort_by_key(|&(i, j)| (j, i));
        edges.dedup();
        let mut by_output = vec![Vec::new(); outputs];
        let mut by_input = vec![Vec::new(); inputs];
        for (e, &(i, j)) in edges.iter().enumerate() {
            by_output[j].push(e);
            by_input[i].push(e);
        }
        if let Some(j) = by_output.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("output map {j} has no input connection")));
        }
        if let Some(i) = by_input.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("input map {i} feeds no output")));
        }
        Ok(ConnectionTable { inputs, outputs, edges, by_output, by_input })
    }

    pub fn full(inputs: usize, outputs: usize) -> Self {
        let edges = (0..outputs).flat_map(|j| (0..inputs).map(move |i| (i, j))).collect();
        ConnectionTable::new(inputs, outputs, edges).expect("full table is always valid")
    }

    /// A full table with `round(drop_fraction * inputs * outputs)` edges
    /// removed at random, never leaving a map disconnected.
    pub fn random_drop(inputs: usize, outputs: usize, drop_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&drop_fraction) {
            return Err(Error::Config(format!("drop fraction {drop_fraction} not in [0,1)")));
        }
        let full = ConnectionTable::full(inputs, outputs);
        let target = (drop_fraction * full.edges.len() as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..full.edges.len()).collect();
        order.shuffle(&mut rng);
        let mut in_deg = vec![outputs; inputs];
        let mut out_deg = vec![inputs; outputs];
        let mut removed = vec![false; full.edges.len()];
        let mut count = 0;
        for e in order {
            if count == target {
                break;
            }
            let (i, j) = full.edges[e];
            if in_deg[i] > 1 && out_deg[j] > 1 {
                in_deg[i] -= 1;
                out_deg[j] -= 1;
                removed[e] = true;
                count += 1;
            }
        }
        let edges = full
            .edges
            .iter()
            .zip(&removed)
            .filter(|(_, &r)| !r)
            .map(|(&e, _)| e)
            .collect();
        ConnectionTable::new(inputs, outputs, edges)
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edge indices feeding output `j` (the set P_j).
    pub fn edges_into(&self, j: usize) -> &[usize] {
        &self.by_output[j]
    }

    /// Edge indices reconstructing input `i` (the inverse set).
    pub fn edges_from(&self, i: usize) -> &[usize] {
        &self.by_input[i]
    }
}

/// One filter per edge of a [`ConnectionTable`], in edge order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBank {
    kernels: Vec<Kernel2D>,
}

impl KernelBank {
    pub fn new(kernels: Vec<Kernel2D>) -> Result<Self> {
        if let Some(first) = kernels.first() {
            let shape = first.shape();
            if kernels.iter().any(|k| k.shape() != shape) {
                return dim_err("kernel bank mixes filter sizes");
            }
        }
        Ok(KernelBank { kernels })
    }

    pub fn zeros(edges: usize, size: usize) -> Self {
        KernelBank { kernels: vec![Plane::zeros(size, size); edges] }
    }

    /// Uniform taps in `[-bound, bound]`.
    pub fn uniform(edges: usize, size: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let kernels = (0..edges)
            .map(|_| Plane::from_fn(size, size, |_, _| rng.gen_range(-bound..=bound)))
            .collect();
        KernelBank { kernels }
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// Side length of the (square) filters.
    pub fn size(&self) -> usize {
        self.kernels.first().map_or(0, Plane::rows)
    }

    pub fn kernels(&self) -> &[Kernel2D] {
        &self.kernels
    }

    pub fn kernels_mut(&mut self) -> &mut [Kernel2D] {
        &mut self.kernels
    }

    pub fn get(&self, e: usize) -> &Kernel2D {
        &self.kernels[e]
    }

    pub fn axpy(&mut self, alpha: f64, other: &KernelBank) -> Result<()> {
        if self.len() != other.len() {
            return dim_err("kernel bank length mismatch");
        }
        for (a, b) in self.kernels.iter_mut().zip(&other.kernels) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    /// Rescales every filter to unit l2 norm; all-zero filters are left alone.
    pub fn normalize_filters(&mut self) {
        for k in &mut self.kernels {
            let n = k.norm_sq().sqrt();
            if n > 0.0 {
                k.scale(1.0 / n);
            }
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.kernels.iter().map(Plane::norm_sq).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.kernels.iter().all(Plane::is_finite)
    }

    pub(crate) fn check_table(&self, table: &ConnectionTable) -> Result<()> {
        if self.len() != table.edge_count() {
            return dim_err(format!(
                "{} filters for a table with {} edges",
                self.len(),
                table.edge_count()
            ));
        }
        Ok(())
    }
}

/// The reconstruction dictionary is a kernel bank over the layer's edges.
pub type Dictionary = KernelBank;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepSize {
    /// `1/L` with `L` estimated by power iteration on the normal operator.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FistaConfig {
    pub max_iters: usize,
    /// Stop once the relative objective change drops below this.
    pub tol: f64,
    pub step: StepSize,
    pub power_iters: usize,
}

impl Default for FistaConfig {
    fn default() -> Self {
        FistaConfig { max_iters: 200, tol: 1e-6, step: StepSize::Auto, power_iters: 20 }
    }
}

impl FistaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("FISTA needs at least one iteration".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("FISTA tolerance must be positive, got {}", self.tol)));
        }
        if let StepSize::Fixed(s) = self.step {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Config(format!("FISTA step must be positive, got {s}")));
            }
        }
        if self.step == StepSize::Auto && self.power_iters == 0 {
            return Err(Error::Config("automatic step needs power iterations".into()));
        }
        Ok(())
    }
}

/// Outcome of a sparse inference run.
#[derive(Clone, Debug)]
pub struct FistaResult {
    /// Best iterate seen.
    pub codes: FeatureMaps,
    /// Energy at `codes`.
    pub objective: f64,
    /// Energy of the last iterate produced before stopping.
    pub final_objective: f64,
    pub iterations: usize,
    pub step: f64,
}

pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    debug_assert!(tau >= 0.0);
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

fn code_shape(x: &FeatureMaps, dict: &Dictionary, table: &ConnectionTable) -> Result<(usize, usize)> {
    dict.check_table(table)?;
    if x.count() != table.inputs() {
        return dim_err(format!("{} input maps for a table with {} inputs", x.count(), table.inputs()));
    }
    let m = dict.size();
    if m == 0 || m > x.rows() || m > x.cols() {
        return dim_err(format!("filters {m}x{m} do not fit inputs {}x{}", x.rows(), x.cols()));
    }
    Ok((x.rows() - m + 1, x.cols() - m + 1))
}

/// Sum over connected codes of the full-mode placement through each filter.
pub fn reconstruct(z: &FeatureMaps, dict: &Dictionary, table: &ConnectionTable) -> Result<FeatureMaps> {
    dict.check_table(table)?;
    if z.count() != table.outputs() {
        return dim_err(format!("{} code maps for a table with {} outputs", z.count(), table.outputs()));
    }
    let m = dict.size();
    let (h, w) = (z.rows() + m - 1, z.cols() + m - 1);
    let mut out = Vec::with_capacity(table.inputs());
    for i in 0..table.inputs() {
        let mut acc = Plane::zeros(h, w);
        for &e in table.edges_from(i) {
            let j = table.edges()[e].1;
            accumulate_full(&mut acc, &z.maps()[j], dict.get(e))?;
        }
        out.push(acc);
    }
    FeatureMaps::new(out)
}

/// Adjoint of [`reconstruct`]: maps an input-shaped residual back to codes.
pub fn reconstruct_adjoint(
    r: &FeatureMaps,
    dict: &Dictionary,
    table: &ConnectionTable,
    code_rows: usize,
    code_cols: usize,
) -> Result<FeatureMaps> {
    let mut out = Vec::with_capacity(table.outputs());
    for j in 0..table.outputs() {
        let mut acc = Plane::zeros(code_rows, code_cols);
        for &e in table.edges_into(j) {
            let i = table.edges()[e].0;
            accumulate_valid(&mut acc, &r.maps()[i], dict.get(e))?;
        }
        out.push(acc);
    }
    FeatureMaps::new(out)
}

fn l1(z: &FeatureMaps) -> f64 {
    z.maps().iter().flat_map(|m| m.as_slice()).map(|v| v.abs()).sum()
}

fn residual(x: &FeatureMaps, recon: &FeatureMaps) -> Result<FeatureMaps> {
    if x.shape() != recon.shape() {
        return dim_err(format!("reconstruction {:?} does not match input {:?}", recon.shape(), x.shape()));
    }
    let maps = x
        .maps()
        .iter()
        .zip(recon.maps())
        .map(|(a, b)| a.zip_map(b, |u, v| u - v))
        .collect::<Result<Vec<_>>>()?;
    FeatureMaps::new(maps)
}

/// `sum_i ||x_i - sum_j D_ij * z_j||^2 + lambda ||z||_1`
pub fn energy_convsc(
    x: &FeatureMaps,
    z: &FeatureMaps,
    dict: &Dictionary,
    table: &ConnectionTable,
    lambda: f64,
) -> Result<f64> {
    let recon = reconstruct(z, dict, table)?;
    let res = residual(x, &recon)?;
    Ok(res.norm_sq() + lambda * l1(z))
}

/// Largest eigenvalue of `A^T A` for the reconstruction operator `A`,
/// by power iteration from a fixed pseudo-random start.
pub fn normal_operator_norm(
    dict: &Dictionary,
    table: &ConnectionTable,
    code_rows: usize,
    code_cols: usize,
    iters: usize,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let maps = (0..table.outputs())
        .map(|_| Plane::from_fn(code_rows, code_cols, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let mut v = FeatureMaps::new(maps)?;
    let mut estimate = 0.0;
    for _ in 0..iters {
        let n = v.norm_sq().sqrt();
        if n == 0.0 {
            return Ok(0.0);
        }
        v = v.map(|a| a / n);
        let av = reconstruct(&v, dict, table)?;
        let w = reconstruct_adjoint(&av, dict, table, code_rows, code_cols)?;
        estimate = w.norm_sq().sqrt();
        v = w;
    }
    Ok(estimate)
}

/// Minimizes [`energy_convsc`] over the codes with FISTA, starting from zero.
///
/// The best iterate seen is returned, so the result never scores worse
/// than the all-zero code.
pub fn fista_infer(
    x: &FeatureMaps,
    dict: &Dictionary,
    table: &ConnectionTable,
    lambda: f64,
    cfg: &FistaConfig,
) -> Result<FistaResult> {
    cfg.validate()?;
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("sparsity weight must be non-negative, got {lambda}")));
    }
    let (ch, cw) = code_shape(x, dict, table)?;
    let step = match cfg.step {
        StepSize::Fixed(s) => s,
        StepSize::Auto => {
            let l = 2.0 * normal_operator_norm(dict, table, ch, cw, cfg.power_iters)?;
            if l > 0.0 {
                1.0 / l
            } else {
                1.0
            }
        }
    };

    let mut z = FeatureMaps::zeros(table.outputs(), ch, cw);
    let mut y = z.clone();
    let mut t = 1.0f64;
    let mut best = z.clone();
    let mut best_obj = x.norm_sq();
    let mut prev_obj = best_obj;
    let mut iterations = 0;
    let thresh = step * lambda;

    for k in 1..=cfg.max_iters {
        iterations = k;
        let recon_y = reconstruct(&y, dict, table)?;
        let res_y = residual(x, &recon_y)?;
        // gradient of the smooth term is -2 A^T r
        let back = reconstruct_adjoint(&res_y, dict, table, ch, cw)?;
        let mut z_next = y.clone();
        for (zm, bm) in z_next.maps_mut().iter_mut().zip(back.maps()) {
            for (zv, &bv) in zm.as_mut_slice().iter_mut().zip(bm.as_slice()) {
                *zv = soft_threshold(*zv + 2.0 * step * bv, thresh);
            }
        }
        let obj = energy_convsc(x, &z_next, dict, table, lambda)?;
        if !obj.is_finite() {
            return Err(Error::Divergence(format!(
                "FISTA objective became {obj} at iteration {k} (step {step:e} too large?)"
            )));
        }
        if obj < best_obj {
            best_obj = obj;
            best.clone_from(&z_next);
        }

        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        y.clone_from(&z_next);
        if momentum != 0.0 {
            for ((ym, zn), zo) in y.maps_mut().iter_mut().zip(z_next.maps()).zip(z.maps()) {
                for ((yv, &a), &b) in ym.as_mut_slice().iter_mut().zip(zn.as_slice()).zip(zo.as_slice()) {
                    *yv = a + momentum * (a - b);
                }
            }
        }
        z = z_next;
        t = t_next;

        let change = (prev_obj - obj).abs();
        prev_obj = obj;
        if change <= cfg.tol * prev_obj.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }

    Ok(FistaResult { codes: best, objective: best_obj, final_objective: prev_obj, iterations, step })
}

/// Gradient of the reconstruction term with respect to every filter,
/// codes held fixed. The l1 term does not depend on the dictionary.
pub fn grad_dictionary(
    x: &FeatureMaps,
    z: &FeatureMaps,
    dict: &Dictionary,
    table: &ConnectionTable,
) -> Result<Dictionary> {
    let recon = reconstruct(z, dict, table)?;
    let res = residual(x, &recon)?;
    let m = dict.size();
    let mut grads = Vec::with_capacity(table.edge_count());
    for &(i, j) in table.edges() {
        let mut g = Plane::zeros(m, m);
        accumulate_valid(&mut g, &res.maps()[i], &z.maps()[j])?;
        g.scale(-2.0);
        grads.push(g);
    }
    KernelBank::new(grads)
}

/// Fraction of exactly-zero code entries.
pub fn zero_fraction(z: &FeatureMaps) -> f64 {
    let total: usize = z.maps().iter().map(Plane::len).sum();
    let zeros = z.maps().iter().flat_map(|m| m.as_slice()).filter(|&&v| v == 0.0).count();
    zeros as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_stack(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> FeatureMaps {
        let maps = (0..n).map(|_| Plane::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0))).collect();
        FeatureMaps::new(maps).unwrap()
    }

    fn scalar_system() -> (Dictionary, ConnectionTable) {
        (KernelBank::new(vec![Plane::scalar(1.0)]).unwrap(), ConnectionTable::full(1, 1))
    }

    /// Independent loop evaluation of the energy.
    fn naive_energy(x: &FeatureMaps, z: &FeatureMaps, dict: &Dictionary, table: &ConnectionTable, lambda: f64) -> f64 {
        let m = dict.size();
        let mut total = 0.0;
        for i in 0..x.count() {
            for r in 0..x.rows() {
                for c in 0..x.cols() {
                    let mut rec = 0.0;
                    for (e, &(ei, j)) in table.edges().iter().enumerate() {
                        if ei != i {
                            continue;
                        }
                        for u in 0..m {
                            for v in 0..m {
                                if r >= u && c >= v && r - u < z.rows() && c - v < z.cols() {
                                    rec += dict.get(e)[(u, v)] * z.maps()[j][(r - u, c - v)];
                                }
                            }
                        }
                    }
                    let d = x.maps()[i][(r, c)] - rec;
                    total += d * d;
                }
            }
        }
        total + lambda * z.maps().iter().flat_map(|p| p.as_slice()).map(|v| v.abs()).sum::<f64>()
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(2.0, 0.5), 1.5);
        assert_eq!(soft_threshold(-0.3, 0.5), 0.0);
        assert_eq!(soft_threshold(-2.0, 0.5), -1.5);
        for v in [-3.5, -0.0, 0.0, 1e-9, 7.25] {
            assert_eq!(soft_threshold(v, 0.0), v);
        }
    }

    #[test]
    fn energy_of_zero_code_is_input_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = rand_stack(&mut rng, 2, 6, 6);
        let table = ConnectionTable::full(2, 3);
        let dict = KernelBank::uniform(6, 3, 1.0, &mut rng);
        let z = FeatureMaps::zeros(3, 4, 4);
        let e = energy_convsc(&x, &z, &dict, &table, 0.7).unwrap();
        assert!((e - x.norm_sq()).abs() < 1e-12);
    }

    #[test]
    fn exact_reconstruction_has_zero_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_stack(&mut rng, 1, 5, 5);
        let (dict, table) = scalar_system();
        assert_eq!(energy_convsc(&x, &x, &dict, &table, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn energy_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let table = ConnectionTable::new(3, 2, vec![(0, 0), (1, 0), (1, 1), (2, 1)]).unwrap();
        let x = rand_stack(&mut rng, 3, 7, 6);
        let dict = KernelBank::uniform(4, 3, 0.5, &mut rng);
        let z = rand_stack(&mut rng, 2, 5, 4);
        let fast = energy_convsc(&x, &z, &dict, &table, 0.3).unwrap();
        let slow = naive_energy(&x, &z, &dict, &table, 0.3);
        assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1.0));
    }

    #[test]
    fn energy_rejects_mismatched_codes() {
        let (dict, table) = scalar_system();
        let x = FeatureMaps::zeros(1, 4, 4);
        let z = FeatureMaps::zeros(1, 3, 4);
        assert!(matches!(energy_convsc(&x, &z, &dict, &table, 0.1), Err(Error::Dimension(_))));
    }

    #[test]
    fn scalar_lasso_closed_form() {
        let (dict, table) = scalar_system();
        let x = FeatureMaps::single(Plane::scalar(2.0));
        let res = fista_infer(&x, &dict, &table, 1.0, &FistaConfig::default()).unwrap();
        assert!((res.codes.maps()[0][(0, 0)] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn zero_input_gives_zero_code() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let table = ConnectionTable::full(1, 4);
        let dict = KernelBank::uniform(4, 3, 1.0, &mut rng);
        let x = FeatureMaps::zeros(1, 8, 8);
        for lambda in [0.1, 1.0] {
            let res = fista_infer(&x, &dict, &table, lambda, &FistaConfig::default()).unwrap();
            assert!(res.codes.maps().iter().all(|m| m.as_slice().iter().all(|&v| v == 0.0)));
            assert_eq!(res.objective, 0.0);
        }
    }

    #[test]
    fn never_worse_than_zero_code() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..10 {
            let table = ConnectionTable::full(1, 4);
            let dict = KernelBank::uniform(4, 3, 1.0, &mut rng);
            let x = rand_stack(&mut rng, 1, 8, 8);
            let cfg = FistaConfig { max_iters: 5, ..Default::default() };
            let res = fista_infer(&x, &dict, &table, 0.5, &cfg).unwrap();
            let zero = energy_convsc(&x, &FeatureMaps::zeros(4, 6, 6), &dict, &table, 0.5).unwrap();
            assert!(res.objective <= zero + 1e-9);
            let at_codes = energy_convsc(&x, &res.codes, &dict, &table, 0.5).unwrap();
            assert!((at_codes - res.objective).abs() <= 1e-12 * at_codes.max(1.0));
            assert!(res.objective <= res.final_objective + 1e-12);
        }
    }

    #[test]
    fn huge_step_reports_divergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let table = ConnectionTable::full(1, 4);
        let dict = KernelBank::uniform(4, 3, 1.0, &mut rng);
        let x = rand_stack(&mut rng, 1, 8, 8);
        let cfg = FistaConfig { step: StepSize::Fixed(1e150), max_iters: 50, ..Default::default() };
        match fista_infer(&x, &dict, &table, 0.5, &cfg) {
            Err(Error::Divergence(msg)) => assert!(msg.contains("iteration")),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn least_squares_with_orthonormal_scalar_dictionary() {
        // two inputs, two codes, 1x1 rotation: orthonormal mixing
        let (c, s) = (0.6f64, 0.8f64);
        let table = ConnectionTable::full(2, 2);
        // edges sorted by (output, input): (0,0), (1,0), (0,1), (1,1)
        let dict = KernelBank::new(vec![
            Plane::scalar(c),
            Plane::scalar(s),
            Plane::scalar(-s),
            Plane::scalar(c),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = rand_stack(&mut rng, 2, 4, 4);
        let cfg = FistaConfig { tol: 1e-14, max_iters: 500, ..Default::default() };
        let res = fista_infer(&x, &dict, &table, 0.0, &cfg).unwrap();
        let rec = reconstruct(&res.codes, &dict, &table).unwrap();
        for (a, b) in rec.flatten().iter().zip(x.flatten()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn sparsity_is_monotone_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let table = ConnectionTable::full(1, 4);
        let mut dict = KernelBank::uniform(4, 3, 1.0, &mut rng);
        dict.normalize_filters();
        let x = rand_stack(&mut rng, 1, 8, 8);
        let cfg = FistaConfig { max_iters: 2000, tol: 1e-12, ..Default::default() };
        let mut last = usize::MAX;
        for lambda in [0.1, 0.5, 1.0, 2.0] {
            let z = fista_infer(&x, &dict, &table, lambda, &cfg).unwrap().codes;
            let nnz = z.flatten().iter().filter(|&&v| v != 0.0).count();
            assert!(nnz <= last, "l0 grew from {last} to {nnz} at lambda {lambda}");
            last = nnz;
        }
    }

    #[test]
    fn dictionary_gradient_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let table = ConnectionTable::full(1, 2);
        let dict = KernelBank::uniform(2, 3, 1.0, &mut rng);
        let x = rand_stack(&mut rng, 1, 6, 6);
        let g = grad_dictionary(&x, &FeatureMaps::zeros(2, 4, 4), &dict, &table).unwrap();
        assert_eq!(g.norm_sq(), 0.0);

        let z = rand_stack(&mut rng, 2, 4, 4);
        let exact = reconstruct(&z, &dict, &table).unwrap();
        let g = grad_dictionary(&exact, &z, &dict, &table).unwrap();
        assert!(g.norm_sq() < 1e-24);
    }

    #[test]
    fn dictionary_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let table = ConnectionTable::new(2, 3, vec![(0, 0), (1, 0), (0, 1), (1, 2)]).unwrap();
        let dict = KernelBank::uniform(4, 3, 1.0, &mut rng);
        let x = rand_stack(&mut rng, 2, 6, 5);
        let z = rand_stack(&mut rng, 3, 4, 3);
        let g = grad_dictionary(&x, &z, &dict, &table).unwrap();
        let h = 1e-5;
        for e in 0..dict.len() {
            for t in 0..9 {
                let mut plus = dict.clone();
                plus.kernels_mut()[e].as_mut_slice()[t] += h;
                let mut minus = dict.clone();
                minus.kernels_mut()[e].as_mut_slice()[t] -= h;
                let fd = (energy_convsc(&x, &z, &plus, &table, 0.0).unwrap()
                    - energy_convsc(&x, &z, &minus, &table, 0.0).unwrap())
                    / (2.0 * h);
                let an = g.get(e).as_slice()[t];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                assert!(rel < 1e-6, "edge {e} tap {t}: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn random_drop_keeps_coverage() {
        let t = ConnectionTable::random_drop(38, 68, 0.2, 7).unwrap();
        assert_eq!(t.edge_count(), 2584 - 517);
        for j in 0..68 {
            assert!(!t.edges_into(j).is_empty());
        }
        for i in 0..38 {
            assert!(!t.edges_from(i).is_empty());
        }
        assert_eq!(t, ConnectionTable::random_drop(38, 68, 0.2, 7).unwrap());
    }

    #[test]
    fn table_rejects_uncovered_maps() {
        assert!(ConnectionTable::new(2, 2, vec![(0, 0), (0, 1)]).is_err());
        assert!(ConnectionTable::new(2, 2, vec![(0, 0), (1, 0)]).is_err());
        assert!(ConnectionTable::new(2, 2, vec![(0, 0), (2, 1)]).is_err());
    }
}
