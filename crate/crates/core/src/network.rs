//! Two-stage convolutional network over YUV windows with a branched
//! stage-1 skip path and a logistic classifier on top.
//!
//! ```text
//! Y  -> predict -> abs/LCN/pool ─┐
//!                                ├─ concat (stage 1) ─> predict -> abs/LCN/pool ─> stage-2 features ─┐
//! UV -> predict -> abs/LCN/pool ─┘          └─────────> boxcar pool ────────────> branch features ───┴─> logistic
//! ```

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{Checkpoint, CheckpointError, Tensor};
use crate::dataset::{Label, SampleWindow, WindowGeometry, YuvImage};
use crate::error::{Error, Result};
use crate::predictor::{self, predict_traced, PredictorParams, PredictorTrace};
use crate::signal::{boxcar_adjoint, boxcar_downsample, pooled_len, FeatureMaps, Plane};
use crate::sparse_coding::ConnectionTable;
use crate::transforms::{
    transform_stack, transform_stack_backward, transform_stack_traced, LcnConfig, LcnGradient, TransformTrace,
    DEFAULT_LCN_SIGMA, DEFAULT_LCN_SIZE,
};
use crate::unsup::{unsup_layer, LayerHyper, LayerParams, Pool, UnsupConfig, UnsupReport};

/// Learning-rate budget of [`NetworkSpec::with_scaled_rates`]; gives the
/// layer default of 0.01 on a 12x12 single-map input with 5x5 filters.
pub const UNSUP_RATE_BUDGET: f64 = 16.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub maps: usize,
    pub kernel: usize,
    pub pool: Pool,
    pub hyper: LayerHyper,
}

impl StageSpec {
    pub fn new(maps: usize, kernel: usize, pool: Pool) -> Self {
        StageSpec { maps, kernel, pool, hyper: LayerHyper::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub window: WindowGeometry,
    pub y: StageSpec,
    pub uv: StageSpec,
    pub stage2: StageSpec,
    /// Fraction of stage-2 input/output connections removed at random.
    pub stage2_drop: f64,
    pub branch_pool: Pool,
    /// Feed pooled stage-1 maps to the classifier alongside stage 2.
    pub multi_stage: bool,
    pub lcn_size: usize,
    pub lcn_sigma: f64,
}

impl NetworkSpec {
    /// 126x78 windows; 32 Y + 6 UV maps, 68 stage-2 maps.
    pub fn paper() -> Self {
        NetworkSpec {
            window: WindowGeometry::PAPER,
            y: StageSpec::new(32, 7, Pool::new(3, 3)),
            uv: StageSpec::new(6, 5, Pool::NONE),
            stage2: StageSpec::new(68, 9, Pool::new(2, 2)),
            stage2_drop: 0.2,
            branch_pool: Pool::new(2, 2),
            multi_stage: true,
            lcn_size: DEFAULT_LCN_SIZE,
            lcn_sigma: DEFAULT_LCN_SIGMA,
        }
        .with_scaled_rates()
        .expect("built-in spec is consistent")
    }

    /// Reduced network for desk-scale experiments on 42x24 windows.
    pub fn small() -> Self {
        NetworkSpec {
            window: WindowGeometry { rows: 42, cols: 24, context: 1.4, uv_subsample: 3 },
            y: StageSpec::new(8, 7, Pool::new(3, 3)),
            uv: StageSpec::new(2, 3, Pool::NONE),
            stage2: StageSpec::new(16, 3, Pool::new(2, 2)),
            stage2_drop: 0.2,
            branch_pool: Pool::new(2, 2),
            multi_stage: true,
            lcn_size: 5,
            lcn_sigma: 1.0,
        }
        .with_scaled_rates()
        .expect("built-in spec is consistent")
    }

    /// Two maps per stage on 12x12 windows; every code path of the paper
    /// network, including the chroma padding, at gradient-check size.
    pub fn tiny() -> Self {
        NetworkSpec {
            window: WindowGeometry { rows: 12, cols: 12, context: 1.4, uv_subsample: 2 },
            y: StageSpec::new(2, 3, Pool::new(2, 2)),
            uv: StageSpec::new(2, 4, Pool::NONE),
            stage2: StageSpec::new(2, 2, Pool::NONE),
            stage2_drop: 0.2,
            branch_pool: Pool::new(2, 1),
            multi_stage: true,
            lcn_size: 3,
            lcn_sigma: 1.0,
        }
        .with_scaled_rates()
        .expect("built-in spec is consistent")
    }

    /// Sets each stage's unsupervised learning rate to
    /// `UNSUP_RATE_BUDGET / (code positions * fan-in * kernel area)`.
    /// The energies are sums over the whole window, so a fixed rate that
    /// suits a 12x12 patch diverges on a full window.
    pub fn with_scaled_rates(mut self) -> Result<Self> {
        let g = self.geometry()?;
        let fan_in2 = (g.stage1.0 as f64 * (1.0 - self.stage2_drop)).max(1.0);
        for (s, conv, fan_in) in [
            (&mut self.y, g.y_conv, 1.0),
            (&mut self.uv, g.uv_conv, 2.0),
            (&mut self.stage2, g.stage2_conv, fan_in2),
        ] {
            let work = (conv.0 * conv.1 * s.kernel * s.kernel) as f64 * fan_in;
            s.hyper.learning_rate = UNSUP_RATE_BUDGET / work;
        }
        Ok(self)
    }

    pub fn lcn(&self) -> LcnConfig {
        LcnConfig::gaussian(self.lcn_size, self.lcn_sigma)
    }

    /// Closed-form shapes of every intermediate.
    pub fn geometry(&self) -> Result<Geometry> {
        self.window.validate()?;
        if !(0.0..1.0).contains(&self.stage2_drop) {
            return Err(Error::Config(format!("stage-2 drop fraction {} not in [0, 1)", self.stage2_drop)));
        }
        for (name, s) in [("y", &self.y), ("uv", &self.uv), ("stage2", &self.stage2)] {
            if s.maps == 0 || s.kernel == 0 || s.pool.size == 0 || s.pool.stride == 0 {
                return Err(Error::Config(format!("stage {name} has a zero-sized parameter: {s:?}")));
            }
        }
        let mut chain = Vec::new();
        let conv_pool = |chain: &mut Vec<String>, name: &str, (r, c): (usize, usize), s: &StageSpec| {
            let conv = (r.checked_sub(s.kernel - 1), c.checked_sub(s.kernel - 1));
            let out = match conv {
                (Some(cr), Some(cc)) if cr > 0 && cc > 0 => {
                    chain.push(format!("{name} conv {}x{}x{}", s.maps, cr, cc));
                    let pr = pooled_len(cr, s.pool.size, s.pool.stride);
                    let pc = pooled_len(cc, s.pool.size, s.pool.stride);
                    match (pr, pc) {
                        (Some(pr), Some(pc)) => {
                            chain.push(format!("{name} pool {}x{}x{}", s.maps, pr, pc));
                            Some(((cr, cc), (pr, pc)))
                        }
                        _ => None,
                    }
                }
                _ => None,
            };
            out.ok_or_else(|| {
                Error::ShapeChain(format!(
                    "{name} stage ({}x{} kernel, pool {:?}) cannot take {r}x{c}; chain: {}",
                    s.kernel,
                    s.kernel,
                    s.pool,
                    chain.join(" -> ")
                ))
            })
        };
        let w = &self.window;
        chain.push(format!("Y 1x{}x{}", w.rows, w.cols));
        let (y_conv, y_pooled) = conv_pool(&mut chain, "Y", (w.rows, w.cols), &self.y)?;
        let uv_input = w.uv_shape();
        chain.push(format!("UV 2x{}x{}", uv_input.0, uv_input.1));
        let (uv_conv, uv_pooled) = conv_pool(&mut chain, "UV", uv_input, &self.uv)?;
        if uv_pooled.0 > y_pooled.0 || uv_pooled.1 > y_pooled.1 {
            return Err(Error::ShapeChain(format!(
                "UV maps {uv_pooled:?} larger than Y maps {y_pooled:?}; chain: {}",
                chain.join(" -> ")
            )));
        }
        let uv_offset = ((y_pooled.0 - uv_pooled.0) / 2, (y_pooled.1 - uv_pooled.1) / 2);
        let stage1 = (self.y.maps + self.uv.maps, y_pooled.0, y_pooled.1);
        chain.push(format!("stage1 {}x{}x{}", stage1.0, stage1.1, stage1.2));
        let (stage2_conv, s2) = conv_pool(&mut chain, "stage2", y_pooled, &self.stage2)?;
        let bp = self.branch_pool;
        let branch = match (pooled_len(stage1.1, bp.size, bp.stride), pooled_len(stage1.2, bp.size, bp.stride)) {
            (Some(r), Some(c)) if bp.size > 0 && bp.stride > 0 => (stage1.0, r, c),
            _ => {
                return Err(Error::ShapeChain(format!(
                    "branch pool {bp:?} cannot take {}x{}; chain: {}",
                    stage1.1,
                    stage1.2,
                    chain.join(" -> ")
                )))
            }
        };
        let stage2_pooled = (self.stage2.maps, s2.0, s2.1);
        let stage2_dim = stage2_pooled.0 * stage2_pooled.1 * stage2_pooled.2;
        let branch_dim = branch.0 * branch.1 * branch.2;
        let classifier_dim = if self.multi_stage { stage2_dim + branch_dim } else { stage2_dim };
        Ok(Geometry {
            y_conv,
            y_pooled,
            uv_input,
            uv_conv,
            uv_pooled,
            uv_offset,
            stage1,
            stage2_conv,
            stage2_pooled,
            branch,
            stage2_dim,
            branch_dim,
            classifier_dim,
        })
    }

    /// Input-pixel distance between neighbouring cells of the dense score
    /// map, or `None` if the stage-2 and branch grids do not share a stride.
    pub fn detection_stride(&self) -> Option<usize> {
        let s = self.y.pool.stride * self.stage2.pool.stride;
        let aligned = !self.multi_stage || self.branch_pool.stride == self.stage2.pool.stride;
        (aligned && s.is_multiple_of(self.window.uv_subsample)).then_some(s)
    }
}

/// Shapes along the network, `(rows, cols)` or `(maps, rows, cols)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Geometry {
    pub y_conv: (usize, usize),
    pub y_pooled: (usize, usize),
    pub uv_input: (usize, usize),
    pub uv_conv: (usize, usize),
    pub uv_pooled: (usize, usize),
    /// Top-left of the chroma maps inside the luma grid.
    pub uv_offset: (usize, usize),
    pub stage1: (usize, usize, usize),
    pub stage2_conv: (usize, usize),
    pub stage2_pooled: (usize, usize, usize),
    pub branch: (usize, usize, usize),
    pub stage2_dim: usize,
    pub branch_dim: usize,
    pub classifier_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Classifier {
    pub fn zeros(dim: usize) -> Self {
        Classifier { weights: vec![0.0; dim], bias: 0.0 }
    }

    pub fn logit(&self, features: &[f64]) -> f64 {
        self.weights.iter().zip(features).map(|(w, f)| w * f).sum::<f64>() + self.bias
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

pub fn logistic(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^a)` without overflow.
fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

/// LCN divisors of the three transform stacks, for evaluating the
/// frozen-denominator surrogate away from the point where they were taken.
#[derive(Clone, Debug, PartialEq)]
pub struct Pins {
    pub y: Plane,
    pub uv: Plane,
    pub stage2: Plane,
}

struct Trace {
    y_in: FeatureMaps,
    uv_in: FeatureMaps,
    y_pred: PredictorTrace,
    y_tr: TransformTrace,
    uv_pred: PredictorTrace,
    uv_tr: TransformTrace,
    stage1: FeatureMaps,
    s2_pred: PredictorTrace,
    s2_tr: TransformTrace,
    features: Vec<f64>,
    logit: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGrad {
    pub y: PredictorParams,
    pub uv: PredictorParams,
    pub stage2: PredictorParams,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl NetworkGrad {
    /// Same order as [`Network::visit_trainable_mut`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in [&self.y, &self.uv, &self.stage2] {
            flatten_predictor(p, &mut out);
        }
        out.extend_from_slice(&self.weights);
        out.push(self.bias);
        out
    }

    fn add(&mut self, other: &NetworkGrad) -> Result<()> {
        self.y.axpy(1.0, &other.y)?;
        self.uv.axpy(1.0, &other.uv)?;
        self.stage2.axpy(1.0, &other.stage2)?;
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        self.bias += other.bias;
        Ok(())
    }
}

fn flatten_predictor(p: &PredictorParams, out: &mut Vec<f64>) {
    for k in p.kernels.kernels() {
        out.extend_from_slice(k.as_slice());
    }
    out.extend_from_slice(&p.gains);
    out.extend_from_slice(&p.biases);
}

fn visit_predictor(p: &mut PredictorParams, f: &mut impl FnMut(&mut f64)) {
    for k in p.kernels.kernels_mut() {
        k.as_mut_slice().iter_mut().for_each(&mut *f);
    }
    p.gains.iter_mut().for_each(&mut *f);
    p.biases.iter_mut().for_each(&mut *f);
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub y: LayerParams,
    pub uv: LayerParams,
    pub stage2: LayerParams,
    pub classifier: Classifier,
}

impl Network {
    /// Random initialization; the stage-2 table drops edges with `seed`.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let g = spec.geometry()?;
        let y = LayerParams::init(ConnectionTable::full(1, spec.y.maps), spec.y.kernel, spec.y.hyper, spec.y.pool, seed)?;
        let uv = LayerParams::init(
            ConnectionTable::full(2, spec.uv.maps),
            spec.uv.kernel,
            spec.uv.hyper,
            spec.uv.pool,
            seed.wrapping_add(1),
        )?;
        let table = ConnectionTable::random_drop(g.stage1.0, spec.stage2.maps, spec.stage2_drop, seed)?;
        let stage2 = LayerParams::init(table, spec.stage2.kernel, spec.stage2.hyper, spec.stage2.pool, seed.wrapping_add(2))?;
        Ok(Network { classifier: Classifier::zeros(g.classifier_dim), spec, y, uv, stage2 })
    }

    pub fn geometry(&self) -> Geometry {
        self.spec.geometry().expect("validated at construction")
    }

    fn check_input(&self, y: &FeatureMaps, uv: &FeatureMaps) -> Result<()> {
        let w = &self.spec.window;
        let (ur, uc) = w.uv_shape();
        if y.shape() != (1, w.rows, w.cols) || uv.shape() != (2, ur, uc) {
            return Err(Error::ShapeChain(format!(
                "window must be Y 1x{}x{} and UV 2x{ur}x{uc}, got Y {:?} and UV {:?}",
                w.rows,
                w.cols,
                y.shape(),
                uv.shape()
            )));
        }
        Ok(())
    }

    fn place_uv(uv: &FeatureMaps, rows: usize, cols: usize, offset: (usize, usize)) -> Result<FeatureMaps> {
        FeatureMaps::new(uv.maps().iter().map(|m| m.place(rows, cols, offset.0 as isize, offset.1 as isize)).collect())
    }

    fn forward_traced(&self, y: &FeatureMaps, uv: &FeatureMaps, pins: Option<&Pins>) -> Result<Trace> {
        self.check_input(y, uv)?;
        let g = self.geometry();
        let lcn = self.spec.lcn();
        let pool = |p: Pool| (p.size, p.stride);

        let (yz, y_pred) = predict_traced(y, &self.y.table, &self.y.predictor)?;
        let (yt, y_tr) = transform_stack_traced(&yz, &lcn, pool(self.y.pool), pins.map(|p| &p.y))?;
        let (uz, uv_pred) = predict_traced(uv, &self.uv.table, &self.uv.predictor)?;
        let (ut, uv_tr) = transform_stack_traced(&uz, &lcn, pool(self.uv.pool), pins.map(|p| &p.uv))?;
        let stage1 = yt.concat(&Self::place_uv(&ut, yt.rows(), yt.cols(), g.uv_offset)?)?;
        if stage1.shape() != g.stage1 {
            return Err(Error::ShapeChain(format!("stage 1 is {:?}, expected {:?}", stage1.shape(), g.stage1)));
        }
        let (s2z, s2_pred) = predict_traced(&stage1, &self.stage2.table, &self.stage2.predictor)?;
        let (s2t, s2_tr) = transform_stack_traced(&s2z, &lcn, pool(self.stage2.pool), pins.map(|p| &p.stage2))?;
        if s2t.shape() != g.stage2_pooled {
            return Err(Error::ShapeChain(format!("stage 2 is {:?}, expected {:?}", s2t.shape(), g.stage2_pooled)));
        }
        let mut features = s2t.flatten();
        if self.spec.multi_stage {
            let b = boxcar_downsample(&stage1, self.spec.branch_pool.size, self.spec.branch_pool.stride)?;
            features.extend(b.flatten());
        }
        if features.len() != self.classifier.weights.len() {
            return Err(Error::ShapeChain(format!(
                "{} features for a {}-weight classifier",
                features.len(),
                self.classifier.weights.len()
            )));
        }
        let logit = self.classifier.logit(&features);
        Ok(Trace {
            y_in: y.clone(),
            uv_in: uv.clone(),
            y_pred,
            y_tr,
            uv_pred,
            uv_tr,
            stage1,
            s2_pred,
            s2_tr,
            features,
            logit,
        })
    }

    /// Classifier input for one window.
    pub fn features(&self, y: &FeatureMaps, uv: &FeatureMaps) -> Result<Vec<f64>> {
        Ok(self.forward_traced(y, uv, None)?.features)
    }

    /// Probability of a pedestrian and the feature vector.
    pub fn forward(&self, y: &FeatureMaps, uv: &FeatureMaps) -> Result<(f64, Vec<f64>)> {
        let t = self.forward_traced(y, uv, None)?;
        Ok((logistic(t.logit), t.features))
    }

    pub fn score(&self, s: &SampleWindow) -> Result<f64> {
        self.forward(&s.y, &s.uv).map(|(p, _)| p)
    }

    /// LCN divisors of a forward pass.
    pub fn pins(&self, y: &FeatureMaps, uv: &FeatureMaps) -> Result<Pins> {
        let t = self.forward_traced(y, uv, None)?;
        Ok(Pins {
            y: t.y_tr.lcn.denominator,
            uv: t.uv_tr.lcn.denominator,
            stage2: t.s2_tr.lcn.denominator,
        })
    }

    /// Cross-entropy of one window (no weight decay).
    pub fn loss(&self, s: &SampleWindow, pins: Option<&Pins>) -> Result<f64> {
        let t = self.forward_traced(&s.y, &s.uv, pins)?;
        Ok(softplus(t.logit) - s.label.target() * t.logit)
    }

    pub fn loss_and_grad(&self, s: &SampleWindow, mode: LcnGradient, pins: Option<&Pins>) -> Result<(f64, NetworkGrad)> {
        let t = self.forward_traced(&s.y, &s.uv, pins)?;
        let target = s.label.target();
        let loss = softplus(t.logit) - target * t.logit;
        let d_logit = logistic(t.logit) - target;
        Ok((loss, self.backward(&t, d_logit, mode)?))
    }

    fn backward(&self, t: &Trace, d_logit: f64, mode: LcnGradient) -> Result<NetworkGrad> {
        let g = self.geometry();
        let lcn = self.spec.lcn();
        let weights: Vec<f64> = t.features.iter().map(|f| d_logit * f).collect();
        let df: Vec<f64> = self.classifier.weights.iter().map(|w| d_logit * w).collect();

        let (n2, r2, c2) = g.stage2_pooled;
        let d_s2t = FeatureMaps::from_flat(n2, r2, c2, &df[..g.stage2_dim])?;
        let d_s2z = transform_stack_backward(&d_s2t, &t.s2_tr, &lcn, mode)?;
        let (g_s2, d_stage1) =
            predictor::backward(&t.stage1, &self.stage2.table, &self.stage2.predictor, &t.s2_pred, &d_s2z, true)?;
        let mut d_stage1 = d_stage1.expect("input gradient requested");
        if self.spec.multi_stage {
            let (nb, rb, cb) = g.branch;
            let d_b = FeatureMaps::from_flat(nb, rb, cb, &df[g.stage2_dim..])?;
            let bp = self.spec.branch_pool;
            d_stage1.axpy(1.0, &boxcar_adjoint(&d_b, g.stage1.1, g.stage1.2, bp.size, bp.stride)?)?;
        }
        let (d_yt, d_placed) = d_stage1.split_at(self.spec.y.maps)?;
        let (ur, uc) = g.uv_pooled;
        let (ot, ol) = (g.uv_offset.0 as isize, g.uv_offset.1 as isize);
        let d_ut = FeatureMaps::new(d_placed.maps().iter().map(|m| m.place(ur, uc, -ot, -ol)).collect())?;

        let d_yz = transform_stack_backward(&d_yt, &t.y_tr, &lcn, mode)?;
        let (g_y, _) = predictor::backward(&t.y_in, &self.y.table, &self.y.predictor, &t.y_pred, &d_yz, false)?;
        let d_uz = transform_stack_backward(&d_ut, &t.uv_tr, &lcn, mode)?;
        let (g_uv, _) = predictor::backward(&t.uv_in, &self.uv.table, &self.uv.predictor, &t.uv_pred, &d_uz, false)?;
        Ok(NetworkGrad { y: g_y, uv: g_uv, stage2: g_s2, weights, bias: d_logit })
    }

    /// Every trainable scalar: predictor kernels, gains and biases of each
    /// stage (Y, UV, stage 2), then classifier weights and bias.
    pub fn visit_trainable_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        visit_predictor(&mut self.y.predictor, &mut f);
        visit_predictor(&mut self.uv.predictor, &mut f);
        visit_predictor(&mut self.stage2.predictor, &mut f);
        self.classifier.weights.iter_mut().for_each(&mut f);
        f(&mut self.classifier.bias);
    }

    fn apply(&mut self, grad: &NetworkGrad, step: f64, classifier_only: bool) -> Result<()> {
        if !classifier_only {
            self.y.predictor.axpy(-step, &grad.y)?;
            self.uv.predictor.axpy(-step, &grad.uv)?;
            self.stage2.predictor.axpy(-step, &grad.stage2)?;
        }
        for (w, g) in self.classifier.weights.iter_mut().zip(&grad.weights) {
            *w -= step * g;
        }
        self.classifier.bias -= step * grad.bias;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.y.predictor.is_finite()
            && self.uv.predictor.is_finite()
            && self.stage2.predictor.is_finite()
            && self.classifier.is_finite()
    }

    /// Stage-1 maps of a window, as seen by stage 2.
    pub fn stage1(&self, y: &FeatureMaps, uv: &FeatureMaps) -> Result<FeatureMaps> {
        self.check_input(y, uv)?;
        let g = self.geometry();
        let lcn = self.spec.lcn();
        let yt = crate::unsup::layer_features(y, &self.y, &lcn)?;
        let ut = crate::unsup::layer_features(uv, &self.uv, &lcn)?;
        yt.concat(&Self::place_uv(&ut, g.y_pooled.0, g.y_pooled.1, g.uv_offset)?)
    }

    /// Layer-wise unsupervised initialization of the three stages.
    pub fn pretrain(mut self, samples: &[SampleWindow], cfg: &UnsupConfig) -> Result<(Network, [UnsupReport; 3])> {
        let ys: Vec<FeatureMaps> = samples.iter().map(|s| s.y.clone()).collect();
        let uvs: Vec<FeatureMaps> = samples.iter().map(|s| s.uv.clone()).collect();
        let (y, ry) = unsup_layer(&ys, self.y, cfg)?;
        self.y = y;
        let (uv, ruv) = unsup_layer(&uvs, self.uv, &UnsupConfig { seed: cfg.seed.wrapping_add(1), ..cfg.clone() })?;
        self.uv = uv;
        let s1 = samples.iter().map(|s| self.stage1(&s.y, &s.uv)).collect::<Result<Vec<_>>>()?;
        let (s2, r2) = unsup_layer(&s1, self.stage2, &UnsupConfig { seed: cfg.seed.wrapping_add(2), ..cfg.clone() })?;
        self.stage2 = s2;
        Ok((self, [ry, ruv, r2]))
    }

    /// Probability map over every window position of a (padded) image,
    /// computed fully convolutionally. Cell `(r, c)` is the window whose
    /// top-left luma pixel is `(r, c) * stride`.
    ///
    /// Contrast normalization sees the whole image rather than one window,
    /// so values differ from [`forward`](Self::forward) on the same crop.
    pub fn score_map_dense(&self, img: &YuvImage) -> Result<Plane> {
        let g = self.geometry();
        if self.spec.detection_stride().is_none() {
            return Err(Error::Config("stage-2 and branch strides differ; use windowed scoring".into()));
        }
        let w = &self.spec.window;
        if img.rows() < w.rows || img.cols() < w.cols {
            return Ok(Plane::zeros(0, 0));
        }
        let lcn = self.spec.lcn();
        let yt = crate::unsup::layer_features(&img.luma(), &self.y, &lcn)?;
        let ut = crate::unsup::layer_features(&img.chroma(w.uv_subsample)?, &self.uv, &lcn)?;
        let stage1 = yt.concat(&Self::place_uv(&ut, yt.rows(), yt.cols(), g.uv_offset)?)?;
        let s2 = transform_stack(
            &crate::predictor::predict(&stage1, &self.stage2.table, &self.stage2.predictor)?,
            &lcn,
            self.stage2.pool.size,
            self.stage2.pool.stride,
        )?;
        let branch = if self.spec.multi_stage {
            Some(boxcar_downsample(&stage1, self.spec.branch_pool.size, self.spec.branch_pool.stride)?)
        } else {
            None
        };
        let (_, wr, wc) = g.stage2_pooled;
        let mut rows = s2.rows().saturating_sub(wr - 1);
        let mut cols = s2.cols().saturating_sub(wc - 1);
        if let Some(b) = &branch {
            rows = rows.min(b.rows().saturating_sub(g.branch.1 - 1));
            cols = cols.min(b.cols().saturating_sub(g.branch.2 - 1));
        }
        let weights = &self.classifier.weights;
        let (s2w, bw) = weights.split_at(g.stage2_dim);
        let mut out = Plane::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let mut a = self.classifier.bias + block_dot(&s2, s2w, r, c, wr, wc);
                if let Some(b) = &branch {
                    a += block_dot(b, bw, r, c, g.branch.1, g.branch.2);
                }
                out[(r, c)] = logistic(a);
            }
        }
        Ok(out)
    }

    /// Same grid as [`score_map_dense`](Self::score_map_dense) but every
    /// cell is the exact [`forward`](Self::forward) score of its window.
    pub fn score_map_windowed(&self, img: &YuvImage, stride: usize) -> Result<Plane> {
        let w = self.spec.window;
        if stride == 0 || !stride.is_multiple_of(w.uv_subsample) {
            return Err(Error::Config(format!("stride {stride} must be a positive multiple of {}", w.uv_subsample)));
        }
        if img.rows() < w.rows || img.cols() < w.cols {
            return Ok(Plane::zeros(0, 0));
        }
        let rows = (img.rows() - w.rows) / stride + 1;
        let cols = (img.cols() - w.cols) / stride + 1;
        let chroma = img.chroma(w.uv_subsample)?;
        let cells: Vec<(usize, usize)> = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).collect();
        let scores = cells
            .par_iter()
            .map(|&(r, c)| {
                let (y, uv) = crop_window(&img.y, &chroma, &w, r * stride, c * stride)?;
                self.forward(&y, &uv).map(|(p, _)| p)
            })
            .collect::<Result<Vec<f64>>>()?;
        Plane::from_vec(rows, cols, scores)
    }
}

/// Luma window at `(top, left)` and the matching chroma cells.
pub fn crop_window(
    y: &Plane,
    chroma: &FeatureMaps,
    w: &WindowGeometry,
    top: usize,
    left: usize,
) -> Result<(FeatureMaps, FeatureMaps)> {
    let (ur, uc) = w.uv_shape();
    let s = w.uv_subsample;
    let yw = FeatureMaps::single(y.crop(top, left, w.rows, w.cols)?);
    let uvw = FeatureMaps::new(
        chroma.maps().iter().map(|m| m.crop(top / s, left / s, ur, uc)).collect::<Result<Vec<_>>>()?,
    )?;
    Ok((yw, uvw))
}

fn block_dot(x: &FeatureMaps, w: &[f64], r: usize, c: usize, h: usize, wd: usize) -> f64 {
    let mut acc = 0.0;
    let mut idx = 0;
    for m in x.maps() {
        for u in 0..h {
            for v in 0..wd {
                acc += w[idx] * m[(r + u, c + v)];
                idx += 1;
            }
        }
    }
    acc
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// L2 penalty `decay/2 * |w|^2` on the classifier weights.
    pub weight_decay: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub lcn_gradient: LcnGradient,
    /// Train only the classifier, keeping convolutional stages fixed.
    pub classifier_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 10,
            weight_decay: 1e-4,
            seed: 0,
            batch_size: 1,
            lcn_gradient: LcnGradient::FrozenDenominator,
            classifier_only: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean objective of each mini-batch before its update.
    pub steps: Vec<f64>,
    pub epochs: Vec<f64>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,mean_loss";

    pub fn csv_lines(&self) -> impl Iterator<Item = String> + '_ {
        self.epochs.iter().enumerate().map(|(i, l)| format!("{},{:.9}", i + 1, l))
    }
}

/// Stochastic gradient descent on the cross-entropy. Gradients of a
/// mini-batch are computed in parallel and summed in sample order.
pub fn finetune(net: Network, samples: &[SampleWindow], cfg: &TrainConfig) -> Result<(Network, TrainHistory)> {
    cfg.validate()?;
    let mut net = net;
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 || samples.is_empty() {
        return Ok((net, history));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| net.loss_and_grad(&samples[i], cfg.lcn_gradient, None))
                .collect::<Result<Vec<_>>>()?;
            let mut iter = results.into_iter();
            let (mut loss, mut grad) = iter.next().expect("non-empty batch");
            for (l, g) in iter {
                loss += l;
                grad.add(&g)?;
            }
            let n = batch.len() as f64;
            let decay = 0.5 * cfg.weight_decay * net.classifier.weights.iter().map(|w| w * w).sum::<f64>();
            let objective = loss / n + decay;
            if !objective.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss at epoch {epoch}, step {}; last losses {:?}",
                    history.steps.len() + 1,
                    &history.steps[history.steps.len().saturating_sub(5)..]
                )));
            }
            history.steps.push(objective);
            epoch_loss += loss;
            if cfg.learning_rate > 0.0 {
                let scale = 1.0 / n;
                let mut g = grad;
                for p in [&mut g.y, &mut g.uv, &mut g.stage2] {
                    visit_predictor(p, &mut |v| *v *= scale);
                }
                for (gw, w) in g.weights.iter_mut().zip(&net.classifier.weights) {
                    *gw = *gw * scale + cfg.weight_decay * w;
                }
                g.bias *= scale;
                net.apply(&g, cfg.learning_rate, cfg.classifier_only)?;
                if !net.is_finite() {
                    return Err(Error::Divergence(format!("parameters became non-finite at epoch {epoch}")));
                }
            }
        }
        history.epochs.push(epoch_loss / samples.len() as f64);
        log::debug!("finetune epoch {epoch}: mean loss {:.6}", history.epochs.last().unwrap());
    }
    Ok((net, history))
}

/// Fraction of windows misclassified at probability 0.5.
pub fn error_rate(net: &Network, samples: &[SampleWindow]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let wrong = samples
        .par_iter()
        .map(|s| net.score(s).map(|p| ((p > 0.5) != (s.label == Label::Pedestrian)) as usize))
        .collect::<Result<Vec<_>>>()?;
    Ok(wrong.iter().sum::<usize>() as f64 / samples.len() as f64)
}

const STAGES: [&str; 3] = ["y", "uv", "stage2"];

impl Network {
    fn stages(&self) -> [&LayerParams; 3] {
        [&self.y, &self.uv, &self.stage2]
    }

    /// All parameters, including the unsupervised dictionaries. `stage`
    /// tags the training phase (e.g. `unsup`, `finetuned`, `bootstrap-2`).
    pub fn to_checkpoint(&self, stage: &str, seed: u64) -> Checkpoint {
        let tables: Vec<&ConnectionTable> = self.stages().iter().map(|l| &l.table).collect();
        let mut ck = Checkpoint::new(json!({
            "model": "convpsd-network",
            "stage": stage,
            "seed": seed,
            "spec": self.spec,
            "tables": tables,
        }));
        for (name, layer) in STAGES.iter().zip(self.stages()) {
            layer.push_tensors(name, &mut ck);
        }
        let c = &self.classifier;
        ck.tensors.push(Tensor::from_f64("classifier/weights", vec![c.weights.len()], &c.weights));
        ck.tensors.push(Tensor::from_f64("classifier/bias", vec![1], &[c.bias]));
        ck
    }

    pub fn tensor_names() -> Vec<String> {
        let mut names: Vec<String> = STAGES.iter().flat_map(|s| LayerParams::tensor_names(s)).collect();
        names.push("classifier/weights".into());
        names.push("classifier/bias".into());
        names
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Network> {
        let malformed = |m: String| Error::Checkpoint(CheckpointError::Malformed(m));
        if ck.meta.get("model").and_then(|v| v.as_str()) != Some("convpsd-network") {
            return Err(malformed("not a network checkpoint".into()));
        }
        let spec: NetworkSpec = serde_json::from_value(ck.meta["spec"].clone())
            .map_err(|e| malformed(format!("bad network spec: {e}")))?;
        let tables: Vec<ConnectionTable> = serde_json::from_value(ck.meta["tables"].clone())
            .map_err(|e| malformed(format!("bad connection tables: {e}")))?;
        let names = Self::tensor_names();
        ck.check_names(names.iter().map(String::as_str))?;
        let g = spec.geometry()?;
        if tables.len() != 3 {
            return Err(malformed(format!("{} connection tables, expected 3", tables.len())));
        }
        let stage_specs = [spec.y, spec.uv, spec.stage2];
        let mut layers = Vec::new();
        for ((name, table), s) in STAGES.iter().zip(tables).zip(stage_specs) {
            layers.push(LayerParams::from_tensors(ck, name, table, s.kernel, s.hyper, s.pool)?);
        }
        let weights = ck.expect("classifier/weights", &[g.classifier_dim])?.to_f64();
        let bias = ck.expect("classifier/bias", &[1])?.to_f64()[0];
        let stage2 = layers.pop().unwrap();
        let uv = layers.pop().unwrap();
        let y = layers.pop().unwrap();
        if y.outputs() != spec.y.maps || uv.outputs() != spec.uv.maps || stage2.inputs() != g.stage1.0 {
            return Err(malformed("connection tables do not match the network spec".into()));
        }
        Ok(Network { spec, y, uv, stage2, classifier: Classifier { weights, bias } })
    }

    /// Parameters rounded to the checkpoint precision.
    pub fn quantized(&self) -> Result<Network> {
        Network::from_checkpoint(&self.to_checkpoint("", 0))
    }
}
