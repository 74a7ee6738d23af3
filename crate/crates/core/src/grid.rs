//! Pixel containers shared by every stage of the pipeline.
//!
//! All grids are row-major with `(x, y)` addressing, `x` along the width.
//! Values are `f64`. Colour frames and soft masks are confined to `[0, 1]`
//! and validated on construction; [`Plane`] is the unconstrained scratch grid
//! used for luminance, derivatives and flow components.

use crate::error::{ensure_same_dims, Error, Result};

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Bilinear sampling footprint for a point inside `[0, w-1] x [0, h-1]`.
///
/// Returns the top-left node and the fractional offsets, or `None` when the
/// point lies outside the grid.
#[inline]
pub(crate) fn bilinear_footprint(
    width: usize,
    height: usize,
    x: f64,
    y: f64,
) -> Option<(usize, usize, f64, f64)> {
    if !(x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64) {
        return None;
    }
    let x0 = (x.floor() as usize).min(width - 1);
    let y0 = (y.floor() as usize).min(height - 1);
    Some((x0, y0, x - x0 as f64, y - y0 as f64))
}

/// A single-channel grid of unconstrained `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::BufferLength {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub(crate) fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Bilinear interpolation; `None` outside `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let (x0, y0, fx, fy) = bilinear_footprint(self.width, self.height, x, y)?;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    /// Bilinear interpolation with the coordinates clamped into the grid.
    pub fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        self.sample_bilinear(xc, yc)
            .expect("clamped coordinates are in bounds")
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// An RGB frame with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Frame {
    /// Builds a frame from interleaved row-major RGB data.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::BufferLength {
                expected: width * height * 3,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::ValueOutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, data)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Stacks three planes as R, G and B. Values must already be in `[0, 1]`.
    pub fn from_channels(channels: [&Plane; 3]) -> Result<Self> {
        let dims = channels[0].dims();
        for c in &channels[1..] {
            ensure_same_dims(dims, c.dims())?;
        }
        let n = dims.0 * dims.1;
        let mut data = Vec::with_capacity(n * 3);
        for i in 0..n {
            data.extend(channels.iter().map(|c| c.data[i]));
        }
        Self::new(dims.0, dims.1, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub(crate) fn pixel_at(&self, index: usize) -> [f64; 3] {
        let i = index * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> Plane {
        assert!(c < 3, "channel index {c} out of range");
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().skip(c).step_by(3).copied().collect(),
        }
    }

    /// Bilinear sample at a sub-pixel position.
    ///
    /// Outside `[0, w-1] x [0, h-1]` the result is black with `valid == false`.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> ([f64; 3], bool) {
        let Some((x0, y0, fx, fy)) = bilinear_footprint(self.width, self.height, x, y) else {
            return ([0.0; 3], false);
        };
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (p00, p10) = (self.pixel(x0, y0), self.pixel(x1, y0));
        let (p01, p11) = (self.pixel(x0, y1), self.pixel(x1, y1));
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] * (1.0 - fx) + p10[c] * fx;
            let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
            // Rounding can push a convex combination a hair outside [0, 1].
            out[c] = (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0);
        }
        (out, true)
    }
}

/// Per-pixel luminance with BT.601 weights.
pub fn to_grayscale(frame: &Frame) -> Plane {
    let data = frame
        .data
        .chunks_exact(3)
        .map(|p| {
            let l = LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2];
            // Keep the result inside the channel range despite rounding.
            let lo = p[0].min(p[1]).min(p[2]);
            let hi = p[0].max(p[1]).max(p[2]);
            l.clamp(lo, hi)
        })
        .collect();
    Plane {
        width: frame.width,
        height: frame.height,
        data,
    }
}

/// Binary fence mask, `true` marks a fence pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FenceMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl FenceMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::BufferLength {
                expected: width * height,
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Fraction of pixels marked as fence.
    pub fn density(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.bits.len() as f64
        }
    }

    /// `true` when every fence pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &FenceMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn union(&self, other: &FenceMask) -> Result<FenceMask> {
        ensure_same_dims(self.dims(), other.dims())?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a || b)
            .collect();
        Ok(FenceMask {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    pub fn not(&self) -> FenceMask {
        FenceMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    /// Whether any pixel with non-zero bilinear weight at `(x, y)` is fence.
    ///
    /// `None` outside the grid. This is the conservative way to carry a mask
    /// through a sub-pixel warp: a sample that mixes in any fence colour is
    /// itself treated as fence.
    pub fn any_in_footprint(&self, x: f64, y: f64) -> Option<bool> {
        self.any_in_footprint_above(x, y, 1e-9)
    }

    /// Like [`any_in_footprint`](Self::any_in_footprint), but ignores fence
    /// pixels whose bilinear weight is at most `min_weight`.
    pub fn any_in_footprint_above(&self, x: f64, y: f64, min_weight: f64) -> Option<bool> {
        let (x0, y0, fx, fy) = bilinear_footprint(self.width, self.height, x, y)?;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let wx = [1.0 - fx, fx];
        let wy = [1.0 - fy, fy];
        let xs = [x0, x1];
        let ys = [y0, y1];
        let mut hit = false;
        for (j, &yy) in ys.iter().enumerate() {
            for (i, &xx) in xs.iter().enumerate() {
                hit |= wx[i] * wy[j] > min_weight && self.get(xx, yy);
            }
        }
        Some(hit)
    }

    pub fn to_soft(&self) -> SoftMask {
        SoftMask {
            width: self.width,
            height: self.height,
            scores: self
                .bits
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

/// Boolean grid where `true` marks a usable sample (for example, a warp that
/// stayed inside the source frame). Shares its representation with
/// [`FenceMask`].
pub type ValidityMask = FenceMask;

/// Per-pixel fence confidence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    width: usize,
    height: usize,
    scores: Vec<f64>,
}

impl SoftMask {
    pub fn new(width: usize, height: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != width * height {
            return Err(Error::BufferLength {
                expected: width * height,
                actual: scores.len(),
            });
        }
        if let Some((index, &value)) = scores
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::ValueOutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            scores,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            scores: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.scores[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    /// Scores at or above `threshold` become fence.
    pub fn threshold(&self, threshold: f64) -> FenceMask {
        FenceMask {
            width: self.width,
            height: self.height,
            bits: self.scores.iter().map(|&s| s >= threshold).collect(),
        }
    }

    /// Bilinear score at a sub-pixel position; `None` outside the grid.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let (x0, y0, fx, fy) = bilinear_footprint(self.width, self.height, x, y)?;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        Some((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0))
    }
}

/// Dense displacement field mapping target coordinates into another frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        for len in [u.len(), v.len()] {
            if len != width * height {
                return Err(Error::BufferLength {
                    expected: width * height,
                    actual: len,
                });
            }
        }
        if let Some(index) = u.iter().chain(&v).position(|c| !c.is_finite()) {
            return Err(Error::NonFiniteFlow {
                index: index % (width * height).max(1),
            });
        }
        Ok(Self {
            width,
            height,
            u,
            v,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::uniform(width, height, 0.0, 0.0)
    }

    pub fn uniform(width: usize, height: usize, u: f64, v: f64) -> Self {
        Self {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub(crate) fn from_planes(u: Plane, v: Plane) -> Result<Self> {
        ensure_same_dims(u.dims(), v.dims())?;
        Self::new(u.width, u.height, u.data, v.data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    /// Mean Euclidean endpoint error against a uniform ground-truth motion,
    /// over the pixels for which `include` returns `true`.
    pub fn mean_endpoint_error(
        &self,
        truth: (f64, f64),
        mut include: impl FnMut(usize, usize) -> bool,
    ) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in 0..self.height {
            for x in 0..self.width {
                if include(x, y) {
                    let (u, v) = self.get(x, y);
                    sum += ((u - truth.0).powi(2) + (v - truth.1).powi(2)).sqrt();
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Global translation between two frames, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Translation {
    pub dx: f64,
    pub dy: f64,
}

impl Translation {
    pub const ZERO: Translation = Translation { dx: 0.0, dy: 0.0 };

    pub fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }

    pub fn inverse(self) -> Self {
        Self {
            dx: -self.dx,
            dy: -self.dy,
        }
    }
}
