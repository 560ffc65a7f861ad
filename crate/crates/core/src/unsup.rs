//! Layer-wise unsupervised training: alternate sparse inference with
//! stochastic updates of the dictionary and the predictor, then stack
//! layers through rectification, contrast normalization and pooling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointError, Tensor};
use crate::error::{Error, Result};
use crate::predictor::{energy_pred, grad_predictor, predict, PredictorParams};
use crate::signal::{FeatureMaps, Plane};
use crate::sparse_coding::{
    fista_infer, grad_dictionary, zero_fraction, ConnectionTable, Dictionary, FistaConfig, KernelBank,
};
use crate::transforms::{transform_stack, LcnConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool {
    pub size: usize,
    pub stride: usize,
}

impl Pool {
    pub const NONE: Pool = Pool { size: 1, stride: 1 };

    pub fn new(size: usize, stride: usize) -> Self {
        Pool { size, stride }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerHyper {
    /// Sparsity weight on the l1 term.
    pub lambda: f64,
    /// Weight of the prediction energy.
    pub beta: f64,
    pub learning_rate: f64,
}

impl Default for LayerHyper {
    fn default() -> Self {
        LayerHyper { lambda: 0.5, beta: 1.0, learning_rate: 0.01 }
    }
}

/// One convolutional sparse layer: decoder dictionary, encoder, wiring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub dictionary: Dictionary,
    pub predictor: PredictorParams,
    pub table: ConnectionTable,
    pub hyper: LayerHyper,
    pub pool: Pool,
}

impl LayerParams {
    /// Random unit-norm dictionary and scaled-uniform predictor.
    pub fn init(table: ConnectionTable, kernel: usize, hyper: LayerHyper, pool: Pool, seed: u64) -> Result<Self> {
        if kernel == 0 {
            return Err(Error::Config("kernel size must be positive".into()));
        }
        if !(hyper.lambda >= 0.0) || !(hyper.beta >= 0.0) || !(hyper.learning_rate >= 0.0) {
            return Err(Error::Config(format!("invalid layer hyperparameters {hyper:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dictionary = KernelBank::uniform(table.edge_count(), kernel, 1.0, &mut rng);
        dictionary.normalize_filters();
        let predictor = PredictorParams::init(&table, kernel, &mut rng);
        Ok(LayerParams { dictionary, predictor, table, hyper, pool })
    }

    pub fn kernel_size(&self) -> usize {
        self.dictionary.size()
    }

    pub fn outputs(&self) -> usize {
        self.table.outputs()
    }

    pub fn inputs(&self) -> usize {
        self.table.inputs()
    }

    /// Shape after predict + transform stack for an input of `rows x cols`.
    pub fn output_shape(&self, rows: usize, cols: usize) -> Option<(usize, usize, usize)> {
        let m = self.kernel_size();
        if m > rows || m > cols {
            return None;
        }
        let (r, c) = (rows - m + 1, cols - m + 1);
        let pr = crate::signal::pooled_len(r, self.pool.size, self.pool.stride)?;
        let pc = crate::signal::pooled_len(c, self.pool.size, self.pool.stride)?;
        Some((self.outputs(), pr, pc))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnsupConfig {
    pub epochs: usize,
    pub seed: u64,
    pub fista: FistaConfig,
    /// Scale the learning rate by `1/sqrt(epoch)`.
    pub decay: bool,
}

impl Default for UnsupConfig {
    fn default() -> Self {
        UnsupConfig { epochs: 20, seed: 0, fista: FistaConfig::default(), decay: true }
    }
}

/// Mean energies over one pass through the samples, measured before each
/// sample's update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub e_convsc: f64,
    pub e_pred: f64,
    pub e_cpsd: f64,
    /// Fraction of exactly-zero entries in the optimal codes.
    pub sparsity: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UnsupReport {
    /// Energies at the initial parameters, before any update (epoch 0).
    pub initial: Option<EpochStats>,
    pub epochs: Vec<EpochStats>,
}

impl UnsupReport {
    pub const CSV_HEADER: &'static str = "epoch,e_convsc,e_pred,e_cpsd,sparsity";

    pub fn csv_lines(&self) -> impl Iterator<Item = String> + '_ {
        self.initial.iter().chain(&self.epochs).map(|s| {
            format!("{},{:.9},{:.9},{:.9},{:.6}", s.epoch, s.e_convsc, s.e_pred, s.e_cpsd, s.sparsity)
        })
    }

    pub fn first(&self) -> Option<&EpochStats> {
        self.initial.as_ref().or(self.epochs.first())
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// Single-layer training loop.
pub fn unsup_layer(samples: &[FeatureMaps], layer: LayerParams, cfg: &UnsupConfig) -> Result<(LayerParams, UnsupReport)> {
    let mut layer = layer;
    let mut report = UnsupReport::default();
    if cfg.epochs == 0 {
        return Ok((layer, report));
    }
    if samples.is_empty() {
        return Err(Error::Data("unsupervised training needs at least one sample".into()));
    }
    cfg.fista.validate()?;
    for (idx, s) in samples.iter().enumerate() {
        if layer.output_shape(s.rows(), s.cols()).is_none() || s.count() != layer.inputs() {
            return Err(Error::ShapeChain(format!(
                "sample {idx} {:?} incompatible with a {}-input layer of {}x{} filters",
                s.shape(),
                layer.inputs(),
                layer.kernel_size(),
                layer.kernel_size()
            )));
        }
    }

    report.initial = Some(evaluate_layer(samples, &layer, &cfg.fista)?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let hyper = layer.hyper;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let eta = if cfg.decay {
            hyper.learning_rate / (epoch as f64).sqrt()
        } else {
            hyper.learning_rate
        };
        let (mut sc, mut pr, mut sp) = (0.0, 0.0, 0.0);
        for &idx in &order {
            let x = &samples[idx];
            let inferred = fista_infer(x, &layer.dictionary, &layer.table, hyper.lambda, &cfg.fista)
                .map_err(|e| match e {
                    Error::Divergence(m) => Error::Divergence(format!("epoch {epoch}, sample {idx}: {m}")),
                    other => other,
                })?;
            let z = &inferred.codes;
            let z_pred = predict(x, &layer.table, &layer.predictor)?;
            let e_pred = energy_pred(z, &z_pred)?;
            if !inferred.objective.is_finite() || !e_pred.is_finite() {
                return Err(Error::Divergence(format!("non-finite energy at epoch {epoch}, sample {idx}")));
            }
            sc += inferred.objective;
            pr += e_pred;
            sp += zero_fraction(z);

            if eta > 0.0 {
                let gd = grad_dictionary(x, z, &layer.dictionary, &layer.table)?;
                layer.dictionary.axpy(-eta, &gd)?;
                layer.dictionary.normalize_filters();
                let gp = grad_predictor(x, z, &layer.table, &layer.predictor)?;
                layer.predictor.axpy(-eta * hyper.beta, &gp)?;
                if !layer.dictionary.is_finite() || !layer.predictor.is_finite() {
                    return Err(Error::Divergence(format!(
                        "parameters became non-finite at epoch {epoch}, sample {idx}"
                    )));
                }
            }
        }
        let n = samples.len() as f64;
        let (e_convsc, e_pred) = (sc / n, pr / n);
        report.epochs.push(EpochStats {
            epoch,
            e_convsc,
            e_pred,
            e_cpsd: e_convsc + hyper.beta * e_pred,
            sparsity: sp / n,
        });
        log::debug!("epoch {epoch}: E_ConvSC {e_convsc:.6} E_Pred {e_pred:.6}");
    }
    Ok((layer, report))
}

/// Mean energies of `layer` over `samples` without updating it.
pub fn evaluate_layer(samples: &[FeatureMaps], layer: &LayerParams, fista: &FistaConfig) -> Result<EpochStats> {
    let per_sample = samples
        .par_iter()
        .enumerate()
        .map(|(idx, x)| {
            let inferred = fista_infer(x, &layer.dictionary, &layer.table, layer.hyper.lambda, fista)
                .map_err(|e| match e {
                    Error::Divergence(m) => Error::Divergence(format!("initial evaluation, sample {idx}: {m}")),
                    other => other,
                })?;
            let e_pred = energy_pred(&inferred.codes, &predict(x, &layer.table, &layer.predictor)?)?;
            Ok((inferred.objective, e_pred, zero_fraction(&inferred.codes)))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = samples.len().max(1) as f64;
    let (mut sc, mut pr, mut sp) = (0.0, 0.0, 0.0);
    for (a, b, c) in per_sample {
        sc += a;
        pr += b;
        sp += c;
    }
    let (e_convsc, e_pred) = (sc / n, pr / n);
    Ok(EpochStats { epoch: 0, e_convsc, e_pred, e_cpsd: e_convsc + layer.hyper.beta * e_pred, sparsity: sp / n })
}

/// Features handed to the next layer: predict, then rectify / normalize / pool.
pub fn layer_features(x: &FeatureMaps, layer: &LayerParams, lcn: &LcnConfig) -> Result<FeatureMaps> {
    let z = predict(x, &layer.table, &layer.predictor)?;
    transform_stack(&z, lcn, layer.pool.size, layer.pool.stride)
}

/// Trains `layers` bottom-up, each on the transformed predictor output of
/// the one below.
pub fn hierar_unsup(
    samples: &[FeatureMaps],
    layers: Vec<LayerParams>,
    cfg: &UnsupConfig,
    lcn: &LcnConfig,
) -> Result<Vec<(LayerParams, UnsupReport)>> {
    // check the whole chain before spending time on training
    if let Some(first) = samples.first() {
        let mut chain = vec![format!("{:?}", first.shape())];
        let (mut n, mut r, mut c) = first.shape();
        for (li, layer) in layers.iter().enumerate() {
            let next = if n == layer.inputs() { layer.output_shape(r, c) } else { None };
            match next {
                Some(shape) => {
                    chain.push(format!("{shape:?}"));
                    (n, r, c) = shape;
                }
                None => {
                    return Err(Error::ShapeChain(format!(
                        "layer {li} ({} inputs, {}x{} filters, pool {:?}) cannot take {:?}; chain so far: {}",
                        layer.inputs(),
                        layer.kernel_size(),
                        layer.kernel_size(),
                        layer.pool,
                        (n, r, c),
                        chain.join(" -> ")
                    )))
                }
            }
        }
    }

    let mut inputs = samples.to_vec();
    let mut out = Vec::with_capacity(layers.len());
    for (li, layer) in layers.into_iter().enumerate() {
        let layer_cfg = UnsupConfig { seed: cfg.seed.wrapping_add(li as u64), ..cfg.clone() };
        let (trained, report) = unsup_layer(&inputs, layer, &layer_cfg)?;
        inputs = inputs
            .iter()
            .map(|x| layer_features(x, &trained, lcn))
            .collect::<Result<Vec<_>>>()?;
        out.push((trained, report));
    }
    Ok(out)
}

const LAYER_TENSORS: [&str; 4] = ["dictionary", "kernels", "gains", "biases"];

impl LayerParams {
    pub(crate) fn push_tensors(&self, prefix: &str, ck: &mut Checkpoint) {
        let bank = |b: &KernelBank| {
            let flat: Vec<f64> = b.kernels().iter().flat_map(|k| k.as_slice().iter().copied()).collect();
            (vec![b.len(), b.size(), b.size()], flat)
        };
        let (shape, flat) = bank(&self.dictionary);
        ck.tensors.push(Tensor::from_f64(format!("{prefix}/dictionary"), shape, &flat));
        let (shape, flat) = bank(&self.predictor.kernels);
        ck.tensors.push(Tensor::from_f64(format!("{prefix}/kernels"), shape, &flat));
        let p = &self.predictor;
        ck.tensors.push(Tensor::from_f64(format!("{prefix}/gains"), vec![p.gains.len()], &p.gains));
        ck.tensors.push(Tensor::from_f64(format!("{prefix}/biases"), vec![p.biases.len()], &p.biases));
    }

    pub(crate) fn tensor_names(prefix: &str) -> [String; 4] {
        LAYER_TENSORS.map(|t| format!("{prefix}/{t}"))
    }

    pub(crate) fn from_tensors(
        ck: &Checkpoint,
        prefix: &str,
        table: ConnectionTable,
        kernel: usize,
        hyper: LayerHyper,
        pool: Pool,
    ) -> Result<Self> {
        let (e, m) = (table.edge_count(), kernel);
        let bank = |t: &Tensor| {
            let flat = t.to_f64();
            KernelBank::new(flat.chunks(m * m).map(|c| Plane::from_vec(m, m, c.to_vec()).expect("sized")).collect())
        };
        let dictionary = bank(ck.expect(&format!("{prefix}/dictionary"), &[e, m, m])?)?;
        let kernels = bank(ck.expect(&format!("{prefix}/kernels"), &[e, m, m])?)?;
        let gains = ck.expect(&format!("{prefix}/gains"), &[table.outputs()])?.to_f64();
        let biases = ck.expect(&format!("{prefix}/biases"), &[table.outputs()])?.to_f64();
        Ok(LayerParams { dictionary, predictor: PredictorParams { kernels, gains, biases }, table, hyper, pool })
    }

    /// A stand-alone layer, as trained on single-map inputs such as the
    /// oriented bars.
    pub fn to_checkpoint(&self, stage: &str, seed: u64) -> Checkpoint {
        let mut ck = Checkpoint::new(serde_json::json!({
            "model": "convpsd-layer",
            "stage": stage,
            "seed": seed,
            "kernel": self.kernel_size(),
            "hyper": self.hyper,
            "pool": self.pool,
            "table": self.table,
        }));
        self.push_tensors("layer", &mut ck);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let malformed = |m: String| Error::Checkpoint(CheckpointError::Malformed(m));
        if ck.meta.get("model").and_then(|v| v.as_str()) != Some("convpsd-layer") {
            return Err(malformed("not a layer checkpoint".into()));
        }
        let field = |k: &str| ck.meta.get(k).cloned().ok_or_else(|| malformed(format!("missing {k}")));
        let parse_err = |e: serde_json::Error| malformed(format!("bad layer metadata: {e}"));
        let kernel: usize = serde_json::from_value(field("kernel")?).map_err(parse_err)?;
        let hyper: LayerHyper = serde_json::from_value(field("hyper")?).map_err(parse_err)?;
        let pool: Pool = serde_json::from_value(field("pool")?).map_err(parse_err)?;
        let table: ConnectionTable = serde_json::from_value(field("table")?).map_err(parse_err)?;
        let names = Self::tensor_names("layer");
        ck.check_names(names.iter().map(String::as_str))?;
        Self::from_tensors(ck, "layer", table, kernel, hyper, pool)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterBank {
    Dictionary,
    Predictor,
}

/// Tiles every filter of a layer into one grayscale image, one row per
/// output map in edge order. Each tile is min-max normalized to [0, 1]
/// (a constant tile becomes 0.5); `pad` pixels of 0 separate tiles and
/// surround the grid.
pub fn export_filters(layer: &LayerParams, bank: FilterBank, pad: usize) -> Plane {
    let kernels = match bank {
        FilterBank::Dictionary => layer.dictionary.kernels(),
        FilterBank::Predictor => layer.predictor.kernels.kernels(),
    };
    let m = layer.kernel_size();
    let rows = layer.outputs();
    let cols = (0..rows).map(|j| layer.table.edges_into(j).len()).max().unwrap_or(0);
    let height = rows * m + (rows + 1) * pad;
    let width = cols * m + (cols + 1) * pad;
    let mut grid = Plane::zeros(height, width);
    for j in 0..rows {
        for (t, &e) in layer.table.edges_into(j).iter().enumerate() {
            let k = &kernels[e];
            let lo = k.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = k.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let top = pad + j * (m + pad);
            let left = pad + t * (m + pad);
            for u in 0..m {
                for v in 0..m {
                    grid[(top + u, left + v)] = if hi > lo { (k[(u, v)] - lo) / (hi - lo) } else { 0.5 };
                }
            }
        }
    }
    grid
}
