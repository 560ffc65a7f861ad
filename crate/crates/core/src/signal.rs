//! Dense 2-D signal primitives shared by every other module.
//!
//! Convolution here is cross-correlation: no kernel flip. The adjoint
//! routines are written against that orientation.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// A single row-major 2-D map of `f64` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Filters are stored as planes; most callers use square ones.
pub type Kernel2D = Plane;

impl Plane {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Plane { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Plane { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return dim_err(format!(
                "plane {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Plane { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Plane { rows, cols, data }
    }

    /// Builds a plane from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Plane {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    /// 1x1 delta kernel scaled by `value`.
    pub fn scalar(value: f64) -> Self {
        Plane { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Result<Plane> {
        self.check_same(other)?;
        Ok(Plane {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn dot(&self, other: &Plane) -> Result<f64> {
        self.check_same(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn add_assign(&mut self, other: &Plane) -> Result<()> {
        self.check_same(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Plane) -> Result<()> {
        self.check_same(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Plane {
        Plane::from_fn(self.rows, self.cols, |r, c| self[(r, self.cols - 1 - c)])
    }

    /// Copies `self` into a `rows x cols` plane with its origin at
    /// `(top, left)`; parts falling outside are dropped, uncovered cells are 0.
    pub fn place(&self, rows: usize, cols: usize, top: isize, left: isize) -> Plane {
        let mut out = Plane::zeros(rows, cols);
        for r in 0..self.rows {
            let rr = r as isize + top;
            if rr < 0 || rr >= rows as isize {
                continue;
            }
            for c in 0..self.cols {
                let cc = c as isize + left;
                if cc < 0 || cc >= cols as isize {
                    continue;
                }
                out[(rr as usize, cc as usize)] = self[(r, c)];
            }
        }
        out
    }

    pub fn crop(&self, top: usize, left: usize, rows: usize, cols: usize) -> Result<Plane> {
        if top + rows > self.rows || left + cols > self.cols {
            return dim_err(format!(
                "crop {rows}x{cols} at ({top},{left}) exceeds {}x{}",
                self.rows, self.cols
            ));
        }
        Ok(Plane::from_fn(rows, cols, |r, c| self[(top + r, left + c)]))
    }

    fn check_same(&self, other: &Plane) -> Result<()> {
        if self.shape() != other.shape() {
            return dim_err(format!(
                "shape mismatch {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Plane {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Plane {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// An ordered stack of equally sized planes: images, codes, features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMaps {
    maps: Vec<Plane>,
}

impl FeatureMaps {
    pub fn new(maps: Vec<Plane>) -> Result<Self> {
        let Some(first) = maps.first() else {
            return dim_err("feature stack needs at least one map");
        };
        let shape = first.shape();
        if let Some(bad) = maps.iter().position(|m| m.shape() != shape) {
            return dim_err(format!(
                "map {bad} is {:?}, expected {:?}",
                maps[bad].shape(),
                shape
            ));
        }
        Ok(FeatureMaps { maps })
    }

    pub fn zeros(n: usize, rows: usize, cols: usize) -> Self {
        assert!(n >= 1, "feature stack needs at least one map");
        FeatureMaps { maps: vec![Plane::zeros(rows, cols); n] }
    }

    pub fn single(plane: Plane) -> Self {
        FeatureMaps { maps: vec![plane] }
    }

    pub fn count(&self) -> usize {
        self.maps.len()
    }

    pub fn rows(&self) -> usize {
        self.maps[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.maps[0].cols()
    }

    /// `(n, rows, cols)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.count(), self.rows(), self.cols())
    }

    pub fn maps(&self) -> &[Plane] {
        &self.maps
    }

    pub fn maps_mut(&mut self) -> &mut [Plane] {
        &mut self.maps
    }

    pub fn into_maps(self) -> Vec<Plane> {
        self.maps
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> FeatureMaps {
        FeatureMaps { maps: self.maps.iter().map(|m| m.map(f)).collect() }
    }

    pub fn norm_sq(&self) -> f64 {
        self.maps.iter().map(Plane::norm_sq).sum()
    }

    pub fn dot(&self, other: &FeatureMaps) -> Result<f64> {
        self.check_same(other)?;
        let mut acc = 0.0;
        for (a, b) in self.maps.iter().zip(&other.maps) {
            acc += a.dot(b)?;
        }
        Ok(acc)
    }

    pub fn axpy(&mut self, alpha: f64, other: &FeatureMaps) -> Result<()> {
        self.check_same(other)?;
        for (a, b) in self.maps.iter_mut().zip(&other.maps) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.maps.iter().all(Plane::is_finite)
    }

    /// Row-major concatenation of all maps, map index outermost.
    pub fn flatten(&self) -> Vec<f64> {
        self.maps.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
    }

    pub fn from_flat(n: usize, rows: usize, cols: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != n * rows * cols {
            return dim_err(format!(
                "flat buffer of {} values cannot hold {n}x{rows}x{cols}",
                flat.len()
            ));
        }
        let maps = flat
            .chunks(rows * cols)
            .map(|c| Plane::from_vec(rows, cols, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        FeatureMaps::new(maps)
    }

    /// Stacks the maps of `self` followed by those of `other`.
    pub fn concat(&self, other: &FeatureMaps) -> Result<FeatureMaps> {
        if (self.rows(), self.cols()) != (other.rows(), other.cols()) {
            return dim_err(format!(
                "cannot concatenate {:?} with {:?}",
                self.shape(),
                other.shape()
            ));
        }
        let mut maps = self.maps.clone();
        maps.extend(other.maps.iter().cloned());
        Ok(FeatureMaps { maps })
    }

    /// Splits after the first `n` maps.
    pub fn split_at(&self, n: usize) -> Result<(FeatureMaps, FeatureMaps)> {
        if n == 0 || n >= self.count() {
            return dim_err(format!("cannot split a {}-map stack at {n}", self.count()));
        }
        Ok((
            FeatureMaps { maps: self.maps[..n].to_vec() },
            FeatureMaps { maps: self.maps[n..].to_vec() },
        ))
    }

    fn check_same(&self, other: &FeatureMaps) -> Result<()> {
        if self.shape() != other.shape() {
            return dim_err(format!("stack mismatch {:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(())
    }
}

/// Valid-mode cross-correlation: `out[r,c] = sum_{u,v} x[r+u, c+v] * k[u,v]`.
pub fn conv_valid(x: &Plane, k: &Plane) -> Result<Plane> {
    let (p, q) = x.shape();
    let (kr, kc) = k.shape();
    if kr == 0 || kc == 0 || kr > p || kc > q {
        return dim_err(format!("kernel {kr}x{kc} does not fit map {p}x{q}"));
    }
    let (oh, ow) = (p - kr + 1, q - kc + 1);
    let mut out = Plane::zeros(oh, ow);
    let xs = x.as_slice();
    let ks = k.as_slice();
    let os = out.as_mut_slice();
    for u in 0..kr {
        for v in 0..kc {
            let tap = ks[u * kc + v];
            if tap == 0.0 {
                continue;
            }
            for r in 0..oh {
                let xrow = &xs[(r + u) * q + v..(r + u) * q + v + ow];
                let orow = &mut os[r * ow..(r + 1) * ow];
                for (o, &xv) in orow.iter_mut().zip(xrow) {
                    *o += tap * xv;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`conv_valid`] with respect to its input: scatters `y` through
/// the kernel into a `(yh + m - 1) x (yw + m - 1)` map. This is also the
/// full-mode placement used for reconstruction from codes.
pub fn conv_full_adjoint(y: &Plane, k: &Plane) -> Result<Plane> {
    let (yh, yw) = y.shape();
    let (kr, kc) = k.shape();
    if kr == 0 || kc == 0 || yh == 0 || yw == 0 {
        return dim_err("empty operand in full convolution");
    }
    let (p, q) = (yh + kr - 1, yw + kc - 1);
    let mut out = Plane::zeros(p, q);
    accumulate_full(&mut out, y, k)?;
    Ok(out)
}

/// `out += conv_full_adjoint(y, k)` without allocating.
pub fn accumulate_full(out: &mut Plane, y: &Plane, k: &Plane) -> Result<()> {
    let (yh, yw) = y.shape();
    let (kr, kc) = k.shape();
    let q = out.cols();
    if out.rows() != yh + kr - 1 || q != yw + kc - 1 {
        return dim_err(format!(
            "full convolution of {yh}x{yw} with {kr}x{kc} cannot land in {}x{}",
            out.rows(),
            q
        ));
    }
    let ys = y.as_slice();
    let ks = k.as_slice();
    let os = out.as_mut_slice();
    for u in 0..kr {
        for v in 0..kc {
            let tap = ks[u * kc + v];
            if tap == 0.0 {
                continue;
            }
            for r in 0..yh {
                let yrow = &ys[r * yw..(r + 1) * yw];
                let orow = &mut os[(r + u) * q + v..(r + u) * q + v + yw];
                for (o, &yv) in orow.iter_mut().zip(yrow) {
                    *o += tap * yv;
                }
            }
        }
    }
    Ok(())
}

/// `out += conv_valid(x, k)` without allocating.
pub fn accumulate_valid(out: &mut Plane, x: &Plane, k: &Plane) -> Result<()> {
    let (p, q) = x.shape();
    let (kr, kc) = k.shape();
    if kr > p || kc > q || out.rows() != p - kr + 1 || out.cols() != q - kc + 1 {
        return dim_err(format!(
            "valid convolution of {p}x{q} with {kr}x{kc} cannot land in {}x{}",
            out.rows(),
            out.cols()
        ));
    }
    let (oh, ow) = out.shape();
    let xs = x.as_slice();
    let ks = k.as_slice();
    let os = out.as_mut_slice();
    for u in 0..kr {
        for v in 0..kc {
            let tap = ks[u * kc + v];
            if tap == 0.0 {
                continue;
            }
            for r in 0..oh {
                let xrow = &xs[(r + u) * q + v..(r + u) * q + v + ow];
                let orow = &mut os[r * ow..(r + 1) * ow];
                for (o, &xv) in orow.iter_mut().zip(xrow) {
                    *o += tap * xv;
                }
            }
        }
    }
    Ok(())
}

/// Output extent of a boxcar window of `size` stepped by `stride`.
pub fn pooled_len(len: usize, size: usize, stride: usize) -> Option<usize> {
    if size == 0 || stride == 0 || size > len {
        None
    } else {
        Some((len - size) / stride + 1)
    }
}

/// Average pooling with a `size x size` boxcar at multiples of `stride`.
/// Trailing rows/columns that cannot fill a window are dropped.
pub fn boxcar_plane(x: &Plane, size: usize, stride: usize) -> Result<Plane> {
    let (h, w) = x.shape();
    let (Some(oh), Some(ow)) = (pooled_len(h, size, stride), pooled_len(w, size, stride)) else {
        return dim_err(format!("pool {size}/{stride} does not fit map {h}x{w}"));
    };
    let norm = 1.0 / (size * size) as f64;
    Ok(Plane::from_fn(oh, ow, |r, c| {
        let mut acc = 0.0;
        for u in 0..size {
            for v in 0..size {
                acc += x[(r * stride + u, c * stride + v)];
            }
        }
        acc * norm
    }))
}

pub fn boxcar_downsample(x: &FeatureMaps, size: usize, stride: usize) -> Result<FeatureMaps> {
    let maps = x
        .maps()
        .iter()
        .map(|m| boxcar_plane(m, size, stride))
        .collect::<Result<Vec<_>>>()?;
    FeatureMaps::new(maps)
}

/// Adjoint of [`boxcar_plane`]: spreads each output gradient evenly over
/// its window in an `h x w` map.
pub fn boxcar_plane_adjoint(g: &Plane, h: usize, w: usize, size: usize, stride: usize) -> Result<Plane> {
    if pooled_len(h, size, stride) != Some(g.rows()) || pooled_len(w, size, stride) != Some(g.cols()) {
        return Err(Error::Dimension(format!(
            "pool gradient {}x{} inconsistent with {h}x{w} at {size}/{stride}",
            g.rows(),
            g.cols()
        )));
    }
    let norm = 1.0 / (size * size) as f64;
    let mut out = Plane::zeros(h, w);
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            let share = g[(r, c)] * norm;
            for u in 0..size {
                for v in 0..size {
                    out[(r * stride + u, c * stride + v)] += share;
                }
            }
        }
    }
    Ok(out)
}

pub fn boxcar_adjoint(g: &FeatureMaps, h: usize, w: usize, size: usize, stride: usize) -> Result<FeatureMaps> {
    let maps = g
        .maps()
        .iter()
        .map(|m| boxcar_plane_adjoint(m, h, w, size, stride))
        .collect::<Result<Vec<_>>>()?;
    FeatureMaps::new(maps)
}
