//! Translation estimation by phase correlation, and translation warps of
//! soft masks.
//!
//! The estimate follows the usual recipe: forward FFTs of both grids, the
//! normalised cross-power spectrum, an inverse FFT, the location of the
//! correlation peak and a parabolic sub-pixel refinement along each axis.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{ensure_same_dims, Error, Result};
use crate::grid::{Plane, SoftMask, Translation};

/// Smallest side accepted by [`phase_correlate`].
pub const MIN_REGISTRATION_SIDE: usize = 8;

const SPECTRUM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PhaseCorrelationOptions {
    /// Multiply both inputs by a separable Hann window before the FFT.
    pub hann_window: bool,
}

/// Estimates `t` such that `moving(x, y) ≈ reference(x - t.dx, y - t.dy)`.
///
/// Equivalently, [`warp_by_translation`] with the returned `t` carries
/// content from `reference` onto `moving`. Shifts are reported in
/// `(-W/2, W/2] x (-H/2, H/2]` plus a sub-pixel correction.
pub fn phase_correlate(reference: &Plane, moving: &Plane) -> Result<Translation> {
    phase_correlate_with(reference, moving, PhaseCorrelationOptions::default())
}

pub fn phase_correlate_with(
    reference: &Plane,
    moving: &Plane,
    options: PhaseCorrelationOptions,
) -> Result<Translation> {
    ensure_same_dims(reference.dims(), moving.dims())?;
    let (w, h) = reference.dims();
    if w < MIN_REGISTRATION_SIDE || h < MIN_REGISTRATION_SIDE {
        return Err(Error::InputTooSmall {
            width: w,
            height: h,
            min: MIN_REGISTRATION_SIDE,
        });
    }
    for plane in [reference, moving] {
        let (lo, hi) = plane.min_max();
        if hi - lo <= 0.0 {
            return Err(Error::DegenerateInput("constant image has no phase"));
        }
    }

    let mut fft = Fft2d::new(w, h);
    let mut f_ref = fft.to_complex(reference, options.hann_window);
    let mut f_mov = fft.to_complex(moving, options.hann_window);
    fft.forward(&mut f_ref);
    fft.forward(&mut f_mov);

    let mut cross: Vec<Complex64> = f_mov
        .iter()
        .zip(&f_ref)
        .map(|(m, r)| {
            let c = m * r.conj();
            c / (c.norm() + SPECTRUM_EPS)
        })
        .collect();
    fft.inverse(&mut cross);
    let surface: Vec<f64> = cross.iter().map(|c| c.re).collect();

    let (peak, _) =
        surface
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |best, (i, &v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            });
    let (px, py) = (peak % w, peak / w);
    let at = |x: usize, y: usize| surface[y * w + x];

    let center = at(px, py);
    let dx_sub = parabolic_offset(at((px + w - 1) % w, py), center, at((px + 1) % w, py));
    let dy_sub = parabolic_offset(at(px, (py + h - 1) % h), center, at(px, (py + 1) % h));

    Ok(Translation {
        dx: unwrap_shift(px, w) + dx_sub,
        dy: unwrap_shift(py, h) + dy_sub,
    })
}

/// Maps a peak index in `[0, n)` to a signed shift in `(-n/2, n/2]`.
fn unwrap_shift(index: usize, n: usize) -> f64 {
    if index > n / 2 {
        index as f64 - n as f64
    } else {
        index as f64
    }
}

/// Vertex of the parabola through `(-1, left)`, `(0, center)`, `(1, right)`.
fn parabolic_offset(left: f64, center: f64, right: f64) -> f64 {
    let denom = left - 2.0 * center + right;
    if denom.abs() < 1e-15 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

/// `out(x, y) = mask(x - t.dx, y - t.dy)`, bilinear, zero outside the source.
pub fn warp_by_translation(mask: &SoftMask, t: Translation) -> SoftMask {
    let (w, h) = mask.dims();
    let mut scores = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let s = mask
                .sample_bilinear(x as f64 - t.dx, y as f64 - t.dy)
                .unwrap_or(0.0);
            scores.push(s);
        }
    }
    SoftMask::new(w, h, scores).expect("bilinear samples of a soft mask stay in [0, 1]")
}

/// Row-column 2D FFT over a `w x h` complex buffer.
struct Fft2d {
    width: usize,
    height: usize,
    planner: FftPlanner<f64>,
    column: Vec<Complex64>,
}

impl Fft2d {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            planner: FftPlanner::new(),
            column: vec![Complex64::new(0.0, 0.0); height],
        }
    }

    fn to_complex(&self, plane: &Plane, hann: bool) -> Vec<Complex64> {
        let (w, h) = (self.width, self.height);
        let window = |i: usize, n: usize| {
            if hann {
                0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()
            } else {
                1.0
            }
        };
        let wx: Vec<f64> = (0..w).map(|i| window(i, w)).collect();
        let wy: Vec<f64> = (0..h).map(|i| window(i, h)).collect();
        let mut out = Vec::with_capacity(w * h);
        for (y, wy) in wy.iter().enumerate() {
            for (x, wx) in wx.iter().enumerate() {
                out.push(Complex64::new(plane.get(x, y) * wx * wy, 0.0));
            }
        }
        out
    }

    fn forward(&mut self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    /// Inverse transform, normalised by `1 / (w h)`.
    fn inverse(&mut self, data: &mut [Complex64]) {
        self.transform(data, true);
        let scale = 1.0 / (self.width * self.height) as f64;
        for c in data.iter_mut() {
            *c *= scale;
        }
    }

    fn transform(&mut self, data: &mut [Complex64], inverse: bool) {
        let (w, h) = (self.width, self.height);
        let (row_fft, col_fft) = if inverse {
            (
                self.planner.plan_fft_inverse(w),
                self.planner.plan_fft_inverse(h),
            )
        } else {
            (
                self.planner.plan_fft_forward(w),
                self.planner.plan_fft_forward(h),
            )
        };
        for row in data.chunks_exact_mut(w) {
            row_fft.process(row);
        }
        for x in 0..w {
            for y in 0..h {
                self.column[y] = data[y * w + x];
            }
            col_fft.process(&mut self.column);
            for y in 0..h {
                data[y * w + x] = self.column[y];
            }
        }
    }
}
