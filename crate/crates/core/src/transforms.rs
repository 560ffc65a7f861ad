//! Between-layer non-linearities: rectification, local contrast
//! normalization (LCN) and boxcar pooling.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::signal::{boxcar_adjoint, boxcar_downsample, FeatureMaps, Plane};

/// Gaussian weighting and degenerate-denominator floor for LCN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LcnConfig {
    pub kernel: Plane,
    pub epsilon: f64,
}

pub const DEFAULT_LCN_SIZE: usize = 9;
/// Truncates the 9x9 window at roughly three standard deviations.
pub const DEFAULT_LCN_SIGMA: f64 = 1.591;

impl Default for LcnConfig {
    fn default() -> Self {
        LcnConfig::gaussian(DEFAULT_LCN_SIZE, DEFAULT_LCN_SIGMA)
    }
}

impl LcnConfig {
    pub fn gaussian(size: usize, sigma: f64) -> Self {
        let center = (size as f64 - 1.0) / 2.0;
        let mut k = Plane::from_fn(size, size, |r, c| {
            let dr = r as f64 - center;
            let dc = c as f64 - center;
            (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp()
        });
        let total = k.sum();
        k.scale(1.0 / total);
        LcnConfig { kernel: k, epsilon: 1e-8 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.as_slice().iter().any(|&t| t < 0.0 || !t.is_finite()) {
            return Err(Error::Config("LCN weights must be finite and non-negative".into()));
        }
        if (self.kernel.sum() - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("LCN weights sum to {}, not 1", self.kernel.sum())));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("LCN epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// How gradients pass through the divisive stage of LCN.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LcnGradient {
    /// Treat `max(c, sigma)` as a constant of the forward pass.
    #[default]
    FrozenDenominator,
    /// Differentiate through `sigma` and `c` as well.
    Exact,
}

pub fn abs_rectify(x: &FeatureMaps) -> FeatureMaps {
    x.map(f64::abs)
}

/// Backward of [`abs_rectify`] using `sign(0) = 0`.
pub fn abs_backward(x: &FeatureMaps, d_out: &FeatureMaps) -> Result<FeatureMaps> {
    let maps = x
        .maps()
        .iter()
        .zip(d_out.maps())
        .map(|(a, d)| a.zip_map(d, |v, g| if v > 0.0 { g } else if v < 0.0 { -g } else { 0.0 }))
        .collect::<Result<Vec<_>>>()?;
    FeatureMaps::new(maps)
}

fn in_bounds_mass(h: usize, w: usize, k: &Plane) -> Plane {
    let (kr, kc) = k.shape();
    let (cr, cc) = (kr / 2, kc / 2);
    Plane::from_fn(h, w, |r, c| {
        let mut m = 0.0;
        for u in 0..kr {
            let rr = r as isize + u as isize - cr as isize;
            if rr < 0 || rr >= h as isize {
                continue;
            }
            for v in 0..kc {
                let cc2 = c as isize + v as isize - cc as isize;
                if cc2 >= 0 && cc2 < w as isize {
                    m += k[(u, v)];
                }
            }
        }
        m
    })
}

/// Same-size weighted local mean; near borders the weights are
/// renormalized over the taps that land inside the map.
fn smooth(x: &Plane, k: &Plane, mass: &Plane) -> Plane {
    let (h, w) = x.shape();
    let (kr, kc) = k.shape();
    let (cr, cc) = (kr / 2, kc / 2);
    Plane::from_fn(h, w, |r, c| {
        let mut acc = 0.0;
        for u in 0..kr {
            let rr = r as isize + u as isize - cr as isize;
            if rr < 0 || rr >= h as isize {
                continue;
            }
            for v in 0..kc {
                let c2 = c as isize + v as isize - cc as isize;
                if c2 >= 0 && c2 < w as isize {
                    acc += k[(u, v)] * x[(rr as usize, c2 as usize)];
                }
            }
        }
        acc / mass[(r, c)]
    })
}

fn smooth_adjoint(y: &Plane, k: &Plane, mass: &Plane) -> Plane {
    let (h, w) = y.shape();
    let (kr, kc) = k.shape();
    let (cr, cc) = (kr / 2, kc / 2);
    let mut out = Plane::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let g = y[(r, c)] / mass[(r, c)];
            if g == 0.0 {
                continue;
            }
            for u in 0..kr {
                let rr = r as isize + u as isize - cr as isize;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                for v in 0..kc {
                    let c2 = c as isize + v as isize - cc as isize;
                    if c2 >= 0 && c2 < w as isize {
                        out[(rr as usize, c2 as usize)] += k[(u, v)] * g;
                    }
                }
            }
        }
    }
    out
}

/// Forward intermediates of [`lcn`].
#[derive(Clone, Debug)]
pub struct LcnTrace {
    /// Mean-subtracted maps.
    pub centered: FeatureMaps,
    pub sigma: Plane,
    /// Per-sample floor: mean of `sigma`.
    pub floor: f64,
    /// `max(floor, sigma)` actually used as divisor.
    pub denominator: Plane,
    mass: Plane,
}

pub fn lcn(x: &FeatureMaps, cfg: &LcnConfig) -> Result<FeatureMaps> {
    lcn_traced(x, cfg, None).map(|(y, _)| y)
}

/// LCN forward pass. With `pinned` the divisor is taken from the caller
/// instead of being computed from `x`.
pub fn lcn_traced(x: &FeatureMaps, cfg: &LcnConfig, pinned: Option<&Plane>) -> Result<(FeatureMaps, LcnTrace)> {
    let (n, h, w) = x.shape();
    let k = &cfg.kernel;
    let mass = in_bounds_mass(h, w, k);
    let centered = x
        .maps()
        .iter()
        .map(|m| {
            let mean = smooth(m, k, &mass);
            m.zip_map(&mean, |a, b| a - b)
        })
        .collect::<Result<Vec<_>>>()?;
    let centered = FeatureMaps::new(centered)?;

    // the weights are shared across the n maps, so each map gets 1/n
    let mut var = Plane::zeros(h, w);
    for v in centered.maps() {
        var.add_assign(&smooth(&v.map(|a| a * a), k, &mass))?;
    }
    var.scale(1.0 / n as f64);
    let sigma = var.map(|s| s.max(0.0).sqrt());
    let floor = sigma.sum() / sigma.len() as f64;
    let denominator = match pinned {
        Some(p) => {
            if p.shape() != (h, w) {
                return dim_err("pinned LCN denominator has the wrong shape");
            }
            p.clone()
        }
        None => sigma.map(|s| s.max(floor)),
    };
    let eps = cfg.epsilon;
    let out = centered
        .maps()
        .iter()
        .map(|v| v.zip_map(&denominator, |a, d| if d < eps { 0.0 } else { a / d }))
        .collect::<Result<Vec<_>>>()?;
    Ok((FeatureMaps::new(out)?, LcnTrace { centered, sigma, floor, denominator, mass }))
}

pub fn lcn_backward(d_out: &FeatureMaps, trace: &LcnTrace, cfg: &LcnConfig, mode: LcnGradient) -> Result<FeatureMaps> {
    let (n, h, w) = trace.centered.shape();
    if d_out.shape() != (n, h, w) {
        return dim_err("LCN output gradient has the wrong shape");
    }
    let k = &cfg.kernel;
    let eps = cfg.epsilon;
    let den = &trace.denominator;
    let mut d_centered: Vec<Plane> = d_out
        .maps()
        .iter()
        .map(|d| d.zip_map(den, |g, q| if q < eps { 0.0 } else { g / q }))
        .collect::<Result<_>>()?;

    if mode == LcnGradient::Exact {
        // d loss / d denominator
        let mut d_den = Plane::zeros(h, w);
        for (d, v) in d_out.maps().iter().zip(trace.centered.maps()) {
            for idx in 0..d_den.len() {
                let q = den.as_slice()[idx];
                if q >= eps {
                    d_den.as_mut_slice()[idx] -= d.as_slice()[idx] * v.as_slice()[idx] / (q * q);
                }
            }
        }
        let mut d_sigma = Plane::zeros(h, w);
        let mut d_floor = 0.0;
        for idx in 0..d_den.len() {
            let s = trace.sigma.as_slice()[idx];
            if s > trace.floor {
                d_sigma.as_mut_slice()[idx] += d_den.as_slice()[idx];
            } else {
                d_floor += d_den.as_slice()[idx];
            }
        }
        let share = d_floor / d_sigma.len() as f64;
        let d_var = Plane::from_fn(h, w, |r, c| {
            let s = trace.sigma[(r, c)];
            if s > 0.0 {
                (d_sigma[(r, c)] + share) / (2.0 * s)
            } else {
                0.0
            }
        });
        let mut d_sq = smooth_adjoint(&d_var, k, &trace.mass);
        d_sq.scale(1.0 / n as f64);
        for (dv, v) in d_centered.iter_mut().zip(trace.centered.maps()) {
            for idx in 0..dv.len() {
                dv.as_mut_slice()[idx] += 2.0 * v.as_slice()[idx] * d_sq.as_slice()[idx];
            }
        }
    }

    let maps = d_centered
        .into_iter()
        .map(|dv| {
            let back = smooth_adjoint(&dv, k, &trace.mass);
            dv.zip_map(&back, |a, b| a - b)
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureMaps::new(maps)
}

/// Rectify, normalize, then pool, in that order.
pub fn transform_stack(x: &FeatureMaps, cfg: &LcnConfig, pool_size: usize, pool_stride: usize) -> Result<FeatureMaps> {
    let normalized = lcn(&abs_rectify(x), cfg)?;
    boxcar_downsample(&normalized, pool_size, pool_stride)
}

/// Forward trace of [`transform_stack`] for backpropagation.
#[derive(Clone, Debug)]
pub struct TransformTrace {
    pub input: FeatureMaps,
    pub lcn: LcnTrace,
    pub pool: (usize, usize),
}

pub fn transform_stack_traced(
    x: &FeatureMaps,
    cfg: &LcnConfig,
    pool: (usize, usize),
    pinned: Option<&Plane>,
) -> Result<(FeatureMaps, TransformTrace)> {
    let (normalized, lcn_trace) = lcn_traced(&abs_rectify(x), cfg, pinned)?;
    let out = boxcar_downsample(&normalized, pool.0, pool.1)?;
    Ok((out, TransformTrace { input: x.clone(), lcn: lcn_trace, pool }))
}

pub fn transform_stack_backward(
    d_out: &FeatureMaps,
    trace: &TransformTrace,
    cfg: &LcnConfig,
    mode: LcnGradient,
) -> Result<FeatureMaps> {
    let (_, h, w) = trace.input.shape();
    let d_norm = boxcar_adjoint(d_out, h, w, trace.pool.0, trace.pool.1)?;
    let d_abs = lcn_backward(&d_norm, &trace.lcn, cfg, mode)?;
    abs_backward(&trace.input, &d_abs)
}
