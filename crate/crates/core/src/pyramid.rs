//! Feature and confidence pyramids.
//!
//! Grid value `(row, col)` sits at continuous coordinate `(u = col, v = row)`.
//! Moving between resolutions keeps pixel centers aligned, see
//! [`rescale_coord`].

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector2;

use crate::embedding::EmbeddingMap;
use crate::error::{Error, Result};
use crate::geometry::EDGE_TOLERANCE;

/// Row-major, channel-last grid of `f32` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Config(format!(
                "grid data has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for k in 0..channels {
                    data.push(f(r, c, k));
                }
            }
        }
        Self { height, width, channels, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f32) {
        self.data[(row * self.width + col) * self.channels + ch] = value;
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn channel(&self, ch: usize) -> Grid {
        Grid::from_fn(self.height, self.width, 1, |r, c, _| self.get(r, c, ch))
    }

    /// Elementwise product of two single-channel grids of equal shape.
    pub fn mul(&self, other: &Grid) -> Grid {
        assert_eq!(self.shape(), other.shape(), "grid shapes differ");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Grid { data, ..*self }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Locates the bilinear cell of `point`, or `None` when any corner falls
    /// outside the grid.
    #[inline]
    fn cell(&self, point: &Vector2<f64>) -> Option<Cell> {
        if self.width == 0 || self.height == 0 {
            return None;
        }
        let max_u = (self.width - 1) as f64;
        let max_v = (self.height - 1) as f64;
        let t = EDGE_TOLERANCE;
        let (u, v) = (point.x, point.y);
        if !(u >= -t && v >= -t && u <= max_u + t && v <= max_v + t) {
            return None;
        }
        let (u, v) = (u.clamp(0.0, max_u), v.clamp(0.0, max_v));
        let c0 = (u.floor() as usize).min(self.width.saturating_sub(2));
        let r0 = (v.floor() as usize).min(self.height.saturating_sub(2));
        let c1 = (c0 + 1).min(self.width - 1);
        let r1 = (r0 + 1).min(self.height - 1);
        Some(Cell { r0, r1, c0, c1, a: u - c0 as f64, b: v - r0 as f64 })
    }

    /// Bilinear sample into `out`; returns false (and zeros `out`) outside.
    pub fn lookup_into(&self, point: &Vector2<f64>, out: &mut [f64]) -> bool {
        debug_assert_eq!(out.len(), self.channels);
        let Some(cell) = self.cell(point) else {
            out.fill(0.0);
            return false;
        };
        let (w00, w01, w10, w11) = cell.weights();
        let p00 = self.pixel(cell.r0, cell.c0);
        let p01 = self.pixel(cell.r0, cell.c1);
        let p10 = self.pixel(cell.r1, cell.c0);
        let p11 = self.pixel(cell.r1, cell.c1);
        for (k, o) in out.iter_mut().enumerate() {
            *o = w00 * p00[k] as f64 + w01 * p01[k] as f64 + w10 * p10[k] as f64 + w11 * p11[k] as f64;
        }
        true
    }

    /// Bilinear sample plus its derivative along `u` and `v`.
    pub fn lookup_with_gradient_into(
        &self,
        point: &Vector2<f64>,
        value: &mut [f64],
        du: &mut [f64],
        dv: &mut [f64],
    ) -> bool {
        let Some(cell) = self.cell(point) else {
            value.fill(0.0);
            du.fill(0.0);
            dv.fill(0.0);
            return false;
        };
        let (w00, w01, w10, w11) = cell.weights();
        let p00 = self.pixel(cell.r0, cell.c0);
        let p01 = self.pixel(cell.r0, cell.c1);
        let p10 = self.pixel(cell.r1, cell.c0);
        let p11 = self.pixel(cell.r1, cell.c1);
        // Degenerate single-row/column grids have no extent along that axis.
        let su = if cell.c1 > cell.c0 { 1.0 } else { 0.0 };
        let sv = if cell.r1 > cell.r0 { 1.0 } else { 0.0 };
        let (a, b) = (cell.a, cell.b);
        for k in 0..self.channels {
            let (f00, f01, f10, f11) = (p00[k] as f64, p01[k] as f64, p10[k] as f64, p11[k] as f64);
            value[k] = w00 * f00 + w01 * f01 + w10 * f10 + w11 * f11;
            du[k] = su * ((1.0 - b) * (f01 - f00) + b * (f11 - f10));
            dv[k] = sv * ((1.0 - a) * (f10 - f00) + a * (f11 - f01));
        }
        true
    }

    /// Bilinear sample with coordinates clamped to the grid, single channel.
    fn sample_clamped(&self, u: f64, v: f64, ch: usize) -> f64 {
        let u = u.clamp(0.0, (self.width - 1) as f64);
        let v = v.clamp(0.0, (self.height - 1) as f64);
        let cell = self.cell(&Vector2::new(u, v)).expect("clamped point is inside");
        let (w00, w01, w10, w11) = cell.weights();
        w00 * self.get(cell.r0, cell.c0, ch) as f64
            + w01 * self.get(cell.r0, cell.c1, ch) as f64
            + w10 * self.get(cell.r1, cell.c0, ch) as f64
            + w11 * self.get(cell.r1, cell.c1, ch) as f64
    }

    /// Bilinear resize with center-aligned sampling and edge clamping.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Grid {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let ru = self.width as f64 / width as f64;
        let rv = self.height as f64 / height as f64;
        Grid::from_fn(height, width, self.channels, |r, c, k| {
            let u = rescale_coord(c as f64, ru);
            let v = rescale_coord(r as f64, rv);
            self.sample_clamped(u, v, k) as f32
        })
    }

    /// 2x2 minimum pooling, dropping a trailing odd row/column.
    pub fn min_pool2(&self) -> Grid {
        let (h, w) = (self.height / 2, self.width / 2);
        Grid::from_fn(h, w, self.channels, |r, c, k| {
            self.get(2 * r, 2 * c, k)
                .min(self.get(2 * r, 2 * c + 1, k))
                .min(self.get(2 * r + 1, 2 * c, k))
                .min(self.get(2 * r + 1, 2 * c + 1, k))
        })
    }

    /// 2x2 average pooling, dropping a trailing odd row/column.
    pub fn downsample2(&self) -> Grid {
        let (h, w) = (self.height / 2, self.width / 2);
        Grid::from_fn(h, w, self.channels, |r, c, k| {
            let s = self.get(2 * r, 2 * c, k) as f64
                + self.get(2 * r, 2 * c + 1, k) as f64
                + self.get(2 * r + 1, 2 * c, k) as f64
                + self.get(2 * r + 1, 2 * c + 1, k) as f64;
            (s / 4.0) as f32
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
    a: f64,
    b: f64,
}

impl Cell {
    #[inline]
    fn weights(&self) -> (f64, f64, f64, f64) {
        let (a, b) = (self.a, self.b);
        ((1.0 - a) * (1.0 - b), a * (1.0 - b), (1.0 - a) * b, a * b)
    }
}

/// Maps a coordinate between resolutions keeping pixel centers aligned.
/// `ratio` is target size over source size.
#[inline]
pub fn rescale_coord(x: f64, ratio: f64) -> f64 {
    (x + 0.5) * ratio - 0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupResult {
    pub value: Vec<f64>,
    pub in_bounds: bool,
}

pub fn bilinear_lookup(map: &Grid, point: &Vector2<f64>) -> LookupResult {
    let mut value = vec![0.0; map.channels()];
    let in_bounds = map.lookup_into(point, &mut value);
    LookupResult { value, in_bounds }
}

/// `du[k]` and `dv[k]` are the derivatives of channel `k` along `u` and `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGradient {
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
    pub in_bounds: bool,
}

pub fn spatial_gradient(map: &Grid, point: &Vector2<f64>) -> SpatialGradient {
    let c = map.channels();
    let (mut value, mut du, mut dv) = (vec![0.0; c], vec![0.0; c], vec![0.0; c]);
    let in_bounds = map.lookup_with_gradient_into(point, &mut value, &mut du, &mut dv);
    SpatialGradient { du, dv, in_bounds }
}

/// Min-max normalization into `[0, 1]`; a constant grid maps to 0.5.
pub fn min_max_normalize(g: &Grid) -> Grid {
    let (lo, hi) = g.min_max();
    let range = hi as f64 - lo as f64;
    let data = if !(range > 0.0) {
        vec![0.5; g.data.len()]
    } else {
        g.data.iter().map(|&v| ((v as f64 - lo as f64) / range) as f32).collect()
    };
    Grid { data, ..*g }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub features: Grid,
    /// View-consistent confidence.
    pub view_consistent: Grid,
    /// On-ground confidence.
    pub on_ground: Grid,
}

impl PyramidLevel {
    pub fn height(&self) -> usize {
        self.features.height()
    }

    pub fn width(&self) -> usize {
        self.features.width()
    }

    /// `V * O`, the per-pixel point weight map.
    pub fn confidence(&self) -> Grid {
        self.view_consistent.mul(&self.on_ground)
    }
}

/// Levels ordered coarse to fine.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<PyramidLevel>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<PyramidLevel>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Config("pyramid needs at least one level".into()));
        }
        for (i, l) in levels.iter().enumerate() {
            let (h, w, _) = l.features.shape();
            if l.view_consistent.shape() != (h, w, 1) || l.on_ground.shape() != (h, w, 1) {
                return Err(Error::Config(format!("level {i}: confidence shape mismatch")));
            }
            if h == 0 || w == 0 {
                return Err(Error::Config(format!("level {i} is empty")));
            }
            if i > 0 && (h <= levels[i - 1].height() || w <= levels[i - 1].width()) {
                return Err(Error::Config(format!("level {i} is not finer than level {}", i - 1)));
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &PyramidLevel {
        &self.levels[l]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn finest(&self) -> &PyramidLevel {
        self.levels.last().expect("non-empty pyramid")
    }
}

/// Channel layout produced by [`toy_extract`].
pub mod channels {
    pub const INTENSITY: usize = 0;
    pub const GRAD_U: usize = 1;
    pub const GRAD_V: usize = 2;
    pub const GRAD_MAG: usize = 3;
    pub const HEADING: usize = 4;
    pub const DISTANCE: usize = 5;
    pub const HEIGHT: usize = 6;
    pub const COUNT: usize = 7;
}

/// Hand-crafted pyramid standing in for a trained extractor.
///
/// The finest level has the input resolution; each coarser level is a 2x2
/// average pool of the next finer one, except `O`, which is min-pooled so a
/// coarse cell counts as ground only when all of it is. Intensity is the channel mean of the
/// input, which is expected in `[0, 1]` and is clamped to it. `on_ground`,
/// when given, is a single-channel mask at input resolution used for `O`.
pub fn toy_extract(
    image: &Grid,
    embedding: &EmbeddingMap,
    levels: usize,
    on_ground: Option<&Grid>,
) -> Result<FeaturePyramid> {
    let (h, w, k) = image.shape();
    if h == 0 || w == 0 || k == 0 {
        return Err(Error::Config("empty image".into()));
    }
    if levels == 0 {
        return Err(Error::Config("level count must be at least 1".into()));
    }
    if embedding.grid().height() != h || embedding.grid().width() != w {
        return Err(Error::Config("embedding resolution differs from image".into()));
    }
    if let Some(m) = on_ground {
        if m.shape() != (h, w, 1) {
            return Err(Error::Config("on-ground mask resolution differs from image".into()));
        }
    }
    if (h >> (levels - 1)) < 2 || (w >> (levels - 1)) < 2 {
        return Err(Error::Config(format!("{h}x{w} image too small for {levels} levels")));
    }

    let intensity = Grid::from_fn(h, w, 1, |r, c, _| {
        let px = image.pixel(r, c);
        let mean = px.iter().map(|&v| v as f64).sum::<f64>() / k as f64;
        mean.clamp(0.0, 1.0) as f32
    });
    let ones = Grid::filled(h, w, 1, 1.0);

    // fine to coarse, reversed at the end
    let mut stack = Vec::with_capacity(levels);
    let mut cur_i = intensity;
    let mut cur_e = embedding.grid().clone();
    let mut cur_o = on_ground.cloned().unwrap_or(ones);
    for l in 0..levels {
        if l > 0 {
            cur_i = cur_i.downsample2();
            cur_e = cur_e.downsample2();
            cur_o = cur_o.min_pool2();
        }
        stack.push(toy_level(&cur_i, &cur_e, &cur_o));
    }
    stack.reverse();
    FeaturePyramid::new(stack)
}

fn toy_level(intensity: &Grid, embedding: &Grid, on_ground: &Grid) -> PyramidLevel {
    let (h, w, _) = intensity.shape();
    let at = |r: usize, c: usize| intensity.get(r, c, 0) as f64;
    let mut features = Grid::zeros(h, w, channels::COUNT);
    let mut mag = Grid::zeros(h, w, 1);
    for r in 0..h {
        for c in 0..w {
            let gu = central_diff(c, w, |i| at(r, i));
            let gv = central_diff(r, h, |i| at(i, c));
            let m = (gu * gu + gv * gv).sqrt();
            features.set(r, c, channels::INTENSITY, at(r, c) as f32);
            features.set(r, c, channels::GRAD_U, gu as f32);
            features.set(r, c, channels::GRAD_V, gv as f32);
            features.set(r, c, channels::GRAD_MAG, m as f32);
            for e in 0..3 {
                features.set(r, c, channels::HEADING + e, embedding.get(r, c, e));
            }
            mag.set(r, c, 0, m as f32);
        }
    }
    PyramidLevel {
        features,
        view_consistent: min_max_normalize(&mag),
        on_ground: on_ground.clone(),
    }
}

fn central_diff(i: usize, n: usize, f: impl Fn(usize) -> f64) -> f64 {
    if n < 2 {
        0.0
    } else if i == 0 {
        f(1) - f(0)
    } else if i == n - 1 {
        f(n - 1) - f(n - 2)
    } else {
        (f(i + 1) - f(i - 1)) / 2.0
    }
}

const MAGIC: &[u8; 4] = b"PACL";
const VERSION: u32 = 1;

/// Serializes a pyramid: little-endian header `PACL`, version, level count,
/// then per level `h, w, c`, features, V, O as `f32`.
pub fn pyramid_to_bytes(pyr: &FeaturePyramid) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(pyr.len() as u32).to_le_bytes());
    for l in pyr.levels() {
        let (h, w, c) = l.features.shape();
        for d in [h, w, c] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for g in [&l.features, &l.view_consistent, &l.on_ground] {
            for v in g.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                message: format!("truncated while reading {what} (starts at byte {})", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn grid(&mut self, h: usize, w: usize, c: usize, what: &str) -> Result<Grid> {
        let n = h
            .checked_mul(w)
            .and_then(|x| x.checked_mul(c))
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(|| Error::Format {
                offset: self.pos as u64,
                message: format!("{what} size overflows"),
            })?;
        let raw = self.take(n, what)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        Grid::from_vec(h, w, c, data)
    }
}

pub fn pyramid_from_bytes(bytes: &[u8]) -> Result<FeaturePyramid> {
    let mut rd = Reader { bytes, pos: 0 };
    let magic = rd.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format { offset: 0, message: format!("bad magic {magic:?}") });
    }
    let version = rd.u32("version")?;
    if version != VERSION {
        return Err(Error::Format { offset: 4, message: format!("unsupported version {version}") });
    }
    let level_count = rd.u32("level count")?;
    if level_count == 0 {
        return Err(Error::Format { offset: 8, message: "zero levels".into() });
    }
    let mut levels = Vec::new();
    for l in 0..level_count {
        let header_at = rd.pos as u64;
        let h = rd.u32("level height")? as usize;
        let w = rd.u32("level width")? as usize;
        let c = rd.u32("level channels")? as usize;
        let features = rd.grid(h, w, c, &format!("level {l} features"))?;
        let view_consistent = rd.grid(h, w, 1, &format!("level {l} V"))?;
        let on_ground = rd.grid(h, w, 1, &format!("level {l} O"))?;
        let level = PyramidLevel { features, view_consistent, on_ground };
        if let Some(prev) = levels.last() {
            let prev: &PyramidLevel = prev;
            if h <= prev.height() || w <= prev.width() {
                return Err(Error::Format {
                    offset: header_at,
                    message: format!("level {l} is not finer than its predecessor"),
                });
            }
        }
        levels.push(level);
    }
    if rd.pos != bytes.len() {
        return Err(Error::Format {
            offset: rd.pos as u64,
            message: format!("{} trailing bytes", bytes.len() - rd.pos),
        });
    }
    FeaturePyramid::new(levels)
}

pub fn write_pyramid(pyr: &FeaturePyramid, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&pyramid_to_bytes(pyr))?;
    Ok(())
}

pub fn read_pyramid(path: impl AsRef<Path>) -> Result<FeaturePyramid> {
    pyramid_from_bytes(&fs::read(path)?)
}
