//! Occlusion-aware coarse-to-fine optical flow.
//!
//! The flow `F = (u, v)` maps target coordinates into the neighbour frame,
//! so that `neighbor(x + u, y + v) ≈ target(x, y)`. At each pyramid level the
//! solver minimises
//!
//! ```text
//! E(F) = Σ_x ¬P(x) |I₁(x + F(x)) − I₀(x)| + λ Σ_edges (|Δu| + |Δv|)
//! ```
//!
//! where `P` is the fence mask and the smoothness sum runs over horizontal
//! and vertical forward differences. Each outer iteration re-warps the
//! neighbour, linearises the data term and solves for the increment
//! `(du, dv)` by iteratively re-weighted least squares: both L1 terms are
//! replaced by Charbonnier weights `1 / sqrt(r² + ε²)` and every weighted
//! quadratic problem is relaxed with SOR sweeps in raster order.
//!
//! Fence pixels contribute no data term, so their flow is carried in from
//! the surrounding background by the smoothness term alone.

use crate::error::{ensure_same_dims, Error, Result};
use crate::grid::{to_grayscale, FenceMask, FlowField, Frame, Plane, ValidityMask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    /// Weight of the smoothness term.
    pub lambda: f64,
    /// Size ratio between consecutive pyramid levels.
    pub pyramid_scale: f64,
    /// The pyramid stops before a level's smaller side drops below this.
    pub min_dimension: usize,
    pub outer_warps_per_level: usize,
    pub irls_iterations: usize,
    pub sor_iterations: usize,
    pub sor_omega: f64,
    pub irls_epsilon: f64,
    /// 3x3 median filter on the flow after every outer warp.
    pub median_filter: bool,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            lambda: 0.0005,
            pyramid_scale: 0.5,
            min_dimension: 16,
            outer_warps_per_level: 3,
            irls_iterations: 5,
            sor_iterations: 30,
            sor_omega: 1.9,
            irls_epsilon: 1e-3,
            median_filter: true,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::param(
                "lambda",
                format!("{} must be > 0", self.lambda),
            ));
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return Err(Error::param(
                "pyramid_scale",
                format!("{} is outside (0, 1)", self.pyramid_scale),
            ));
        }
        if !(self.sor_omega > 0.0 && self.sor_omega < 2.0) {
            return Err(Error::param(
                "sor_omega",
                format!("{} is outside (0, 2)", self.sor_omega),
            ));
        }
        if !(self.irls_epsilon > 0.0 && self.irls_epsilon.is_finite()) {
            return Err(Error::param(
                "irls_epsilon",
                format!("{} must be > 0", self.irls_epsilon),
            ));
        }
        if self.min_dimension < 2 {
            return Err(Error::param("min_dimension", "must be at least 2"));
        }
        Ok(())
    }
}

/// Gaussian image pyramid, level 0 finest.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<Plane>,
}

impl Pyramid {
    pub fn levels(&self) -> &[Plane] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn dims(&self) -> Vec<(usize, usize)> {
        self.levels.iter().map(Plane::dims).collect()
    }
}

/// Dimensions of every pyramid level for an image of `(w, h)`.
fn level_dims(w: usize, h: usize, params: &FlowParams) -> Vec<(usize, usize)> {
    let mut dims = vec![(w, h)];
    loop {
        let (pw, ph) = *dims.last().expect("non-empty");
        let nw = (pw as f64 * params.pyramid_scale).round() as usize;
        let nh = (ph as f64 * params.pyramid_scale).round() as usize;
        if nw.min(nh) < params.min_dimension || (nw, nh) == (pw, ph) {
            break;
        }
        dims.push((nw, nh));
    }
    dims
}

pub fn build_pyramid(image: &Plane, params: &FlowParams) -> Result<Pyramid> {
    params.validate()?;
    let (w, h) = image.dims();
    if w.min(h) < params.min_dimension {
        return Err(Error::InputTooSmall {
            width: w,
            height: h,
            min: params.min_dimension,
        });
    }
    let dims = level_dims(w, h, params);
    let sigma = 1.0 / (2.0 * params.pyramid_scale).sqrt();
    let mut levels = vec![image.clone()];
    for &(nw, nh) in &dims[1..] {
        let smoothed = gaussian_blur(levels.last().expect("non-empty"), sigma);
        levels.push(resample(&smoothed, nw, nh));
    }
    Ok(Pyramid { levels })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|k| k / total).collect()
}

/// Separable Gaussian blur with clamp-to-edge borders.
fn gaussian_blur(p: &Plane, sigma: f64) -> Plane {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (p.width() as isize, p.height() as isize);
    let horizontal = Plane::from_fn(p.width(), p.height(), |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let sx = (x as isize + i as isize - r).clamp(0, w - 1) as usize;
                k * p.get(sx, y)
            })
            .sum()
    });
    Plane::from_fn(p.width(), p.height(), |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let sy = (y as isize + i as isize - r).clamp(0, h - 1) as usize;
                k * horizontal.get(x, sy)
            })
            .sum()
    })
}

/// Bilinear resampling with pixel-centre alignment.
fn resample(p: &Plane, nw: usize, nh: usize) -> Plane {
    let sx = p.width() as f64 / nw as f64;
    let sy = p.height() as f64 / nh as f64;
    Plane::from_fn(nw, nh, |x, y| {
        p.sample_clamped((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5)
    })
}

/// Replaces masked samples by the mean of their already known 8-neighbours,
/// peeling the masked region from its boundary inwards. Left unchanged when
/// nothing or everything is masked.
fn fill_masked(p: &Plane, mask: &FenceMask) -> Plane {
    let (w, h) = p.dims();
    let mut known: Vec<bool> = mask.as_slice().iter().map(|&m| !m).collect();
    if known.iter().all(|&k| k) || !known.iter().any(|&k| k) {
        return p.clone();
    }
    let mut out = p.clone();
    let mut front: Vec<usize> = (0..w * h).filter(|&i| !known[i]).collect();
    while !front.is_empty() {
        let mut updates = Vec::new();
        let mut rest = Vec::new();
        for &i in &front {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            let mut sum = 0.0;
            let mut n = 0usize;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (nx, ny) = (x + dx, y + dy);
                    if (dx, dy) == (0, 0)
                        || nx < 0
                        || ny < 0
                        || nx >= w as isize
                        || ny >= h as isize
                    {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if known[j] {
                        sum += out.as_slice()[j];
                        n += 1;
                    }
                }
            }
            if n > 0 {
                updates.push((i, sum / n as f64));
            } else {
                rest.push(i);
            }
        }
        for (i, value) in updates {
            out.as_mut_slice()[i] = value;
            known[i] = true;
        }
        front = rest;
    }
    out
}

/// Coarse mask where a pixel is fence if any fine pixel in its footprint is.
fn downsample_mask(mask: &FenceMask, nw: usize, nh: usize) -> FenceMask {
    let (w, h) = mask.dims();
    let span = |i: usize, fine: usize, coarse: usize| {
        let lo = (i * fine) / coarse;
        let hi = ((i + 1) * fine).div_ceil(coarse).min(fine);
        lo..hi.max(lo + 1)
    };
    FenceMask::from_fn(nw, nh, |x, y| {
        span(y, h, nh).any(|fy| span(x, w, nw).any(|fx| mask.get(fx, fy)))
    })
}

/// Bilinear upsampling of a flow component, rescaled by `factor`.
fn upsample_component(p: &Plane, nw: usize, nh: usize, factor: f64) -> Plane {
    let mut up = resample(p, nw, nh);
    for v in up.as_mut_slice() {
        *v *= factor;
    }
    up
}

/// Fourth-order central differences with clamped borders.
fn derivatives(p: &Plane) -> (Plane, Plane) {
    let (w, h) = (p.width() as isize, p.height() as isize);
    let at = |x: isize, y: isize| p.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize);
    let dx = Plane::from_fn(p.width(), p.height(), |x, y| {
        let (x, y) = (x as isize, y as isize);
        (at(x - 2, y) - 8.0 * at(x - 1, y) + 8.0 * at(x + 1, y) - at(x + 2, y)) / 12.0
    });
    let dy = Plane::from_fn(p.width(), p.height(), |x, y| {
        let (x, y) = (x as isize, y as isize);
        (at(x, y - 2) - 8.0 * at(x, y - 1) + 8.0 * at(x, y + 1) - at(x, y + 2)) / 12.0
    });
    (dx, dy)
}

fn median3x3(p: &Plane) -> Plane {
    let (w, h) = (p.width() as isize, p.height() as isize);
    Plane::from_fn(p.width(), p.height(), |x, y| {
        let mut window = [0.0; 9];
        let mut i = 0;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let sx = (x as isize + dx).clamp(0, w - 1) as usize;
                let sy = (y as isize + dy).clamp(0, h - 1) as usize;
                window[i] = p.get(sx, sy);
                i += 1;
            }
        }
        window.sort_by(f64::total_cmp);
        window[4]
    })
}

/// `warped(x, y) = neighbor(x + u, y + v)`; validity is `false` where the
/// sample left the frame.
pub fn warp_frame(neighbor: &Frame, flow: &FlowField) -> Result<(Frame, ValidityMask)> {
    ensure_same_dims(neighbor.dims(), flow.dims())?;
    let (w, h) = neighbor.dims();
    let mut data = Vec::with_capacity(w * h * 3);
    let mut valid = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.get(x, y);
            let (rgb, ok) = neighbor.sample_bilinear(x as f64 + u, y as f64 + v);
            data.extend_from_slice(&rgb);
            valid.push(ok);
        }
    }
    Ok((Frame::new(w, h, data)?, FenceMask::new(w, h, valid)?))
}

/// Carries a mask through a flow. A pixel is fence when any source pixel
/// with non-zero bilinear weight is fence; samples leaving the frame are
/// reported as `out_of_bounds`.
pub fn warp_mask(mask: &FenceMask, flow: &FlowField, out_of_bounds: bool) -> Result<FenceMask> {
    warp_mask_above(mask, flow, out_of_bounds, 1e-9)
}

/// Like [`warp_mask`], ignoring fence pixels that contribute a bilinear
/// weight of at most `min_weight`.
pub fn warp_mask_above(
    mask: &FenceMask,
    flow: &FlowField,
    out_of_bounds: bool,
    min_weight: f64,
) -> Result<FenceMask> {
    ensure_same_dims(mask.dims(), flow.dims())?;
    Ok(FenceMask::from_fn(mask.width(), mask.height(), |x, y| {
        let (u, v) = flow.get(x, y);
        mask.any_in_footprint_above(x as f64 + u, y as f64 + v, min_weight)
            .unwrap_or(out_of_bounds)
    }))
}

/// Discretised objective on single-channel images.
///
/// Pixels marked in `fence` are excluded from the data term; the neighbour
/// is sampled with clamped coordinates.
pub fn flow_energy(
    target: &Plane,
    neighbor: &Plane,
    fence: &FenceMask,
    u: &Plane,
    v: &Plane,
    lambda: f64,
) -> f64 {
    let (w, h) = target.dims();
    let mut data = 0.0;
    let mut smooth = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (ux, vx) = (u.get(x, y), v.get(x, y));
            if !fence.get(x, y) {
                let s = neighbor.sample_clamped(x as f64 + ux, y as f64 + vx);
                data += (s - target.get(x, y)).abs();
            }
            if x + 1 < w {
                smooth += (u.get(x + 1, y) - ux).abs() + (v.get(x + 1, y) - vx).abs();
            }
            if y + 1 < h {
                smooth += (u.get(x, y + 1) - ux).abs() + (v.get(x, y + 1) - vx).abs();
            }
        }
    }
    data + lambda * smooth
}

/// One re-weighted least-squares problem for the flow increment.
///
/// Per pixel, the data part contributes the 2x2 block
/// `[[a11, a12], [a12, a22]]` and right-hand side `-(b1, b2)`. Edge weights
/// couple neighbouring unknowns: `wu_h[i]` and `wv_h[i]` join pixel `i` with
/// its right neighbour, `wu_v[i]` and `wv_v[i]` with the pixel below. The
/// smoothness residual on an edge is `(u0 + du)_q - (u0 + du)_p`.
#[derive(Debug, Clone)]
pub struct FlowSystem {
    pub width: usize,
    pub height: usize,
    pub a11: Vec<f64>,
    pub a12: Vec<f64>,
    pub a22: Vec<f64>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub wu_h: Vec<f64>,
    pub wu_v: Vec<f64>,
    pub wv_h: Vec<f64>,
    pub wv_v: Vec<f64>,
    pub u0: Vec<f64>,
    pub v0: Vec<f64>,
}

impl FlowSystem {
    /// Runs `iterations` SOR sweeps in raster order, updating `du` then `dv`
    /// at each pixel.
    pub fn sor(&self, du: &mut [f64], dv: &mut [f64], iterations: usize, omega: f64) {
        let (w, h) = (self.width, self.height);
        for _ in 0..iterations {
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    // Gather neighbour couplings as (index, weight_u, weight_v).
                    let mut su = 0.0;
                    let mut sv = 0.0;
                    let mut nu = 0.0;
                    let mut nv = 0.0;
                    let mut couple = |j: usize, wu: f64, wv: f64| {
                        su += wu;
                        sv += wv;
                        nu += wu * (self.u0[j] + du[j] - self.u0[i]);
                        nv += wv * (self.v0[j] + dv[j] - self.v0[i]);
                    };
                    if x > 0 {
                        couple(i - 1, self.wu_h[i - 1], self.wv_h[i - 1]);
                    }
                    if x + 1 < w {
                        couple(i + 1, self.wu_h[i], self.wv_h[i]);
                    }
                    if y > 0 {
                        couple(i - w, self.wu_v[i - w], self.wv_v[i - w]);
                    }
                    if y + 1 < h {
                        couple(i + w, self.wu_v[i], self.wv_v[i]);
                    }

                    let diag_u = self.a11[i] + su;
                    if diag_u > 0.0 {
                        let target = (nu - self.b1[i] - self.a12[i] * dv[i]) / diag_u;
                        du[i] = (1.0 - omega) * du[i] + omega * target;
                    }
                    let diag_v = self.a22[i] + sv;
                    if diag_v > 0.0 {
                        let target = (nv - self.b2[i] - self.a12[i] * du[i]) / diag_v;
                        dv[i] = (1.0 - omega) * dv[i] + omega * target;
                    }
                }
            }
        }
    }
}

/// Diagnostics from [`estimate_flow_traced`].
#[derive(Debug, Clone, Default)]
pub struct FlowTrace {
    /// Objective at the finest level: the initial (upsampled) flow followed
    /// by the value after every outer warp.
    pub finest_energies: Vec<f64>,
}

enum DataMask<'a> {
    Fixed(&'a FenceMask),
    Occlusion {
        target: &'a FenceMask,
        neighbor: &'a FenceMask,
    },
}

/// Estimates the flow from `target` into `neighbor`, ignoring the data term
/// wherever `combined_fence` is set.
pub fn estimate_flow(
    target: &Frame,
    neighbor: &Frame,
    combined_fence: &FenceMask,
    params: &FlowParams,
) -> Result<FlowField> {
    estimate_flow_traced(target, neighbor, combined_fence, params).map(|(f, _)| f)
}

pub fn estimate_flow_traced(
    target: &Frame,
    neighbor: &Frame,
    combined_fence: &FenceMask,
    params: &FlowParams,
) -> Result<(FlowField, FlowTrace)> {
    ensure_same_dims(target.dims(), combined_fence.dims())?;
    solve(target, neighbor, DataMask::Fixed(combined_fence), params)
}

/// Like [`estimate_flow`], but rebuilds the excluded region at every outer
/// warp as `target_fence(x) || neighbor_fence(x + F(x))`, so the neighbour's
/// fence follows the current motion estimate.
pub fn estimate_flow_occlusion_aware(
    target: &Frame,
    neighbor: &Frame,
    target_fence: &FenceMask,
    neighbor_fence: &FenceMask,
    params: &FlowParams,
) -> Result<FlowField> {
    ensure_same_dims(target.dims(), target_fence.dims())?;
    ensure_same_dims(target.dims(), neighbor_fence.dims())?;
    solve(
        target,
        neighbor,
        DataMask::Occlusion {
            target: target_fence,
            neighbor: neighbor_fence,
        },
        params,
    )
    .map(|(f, _)| f)
}

fn mask_pyramid(mask: &FenceMask, dims: &[(usize, usize)]) -> Vec<FenceMask> {
    let mut out = vec![mask.clone()];
    for &(w, h) in &dims[1..] {
        let next = downsample_mask(out.last().expect("non-empty"), w, h);
        out.push(next);
    }
    out
}

fn solve(
    target: &Frame,
    neighbor: &Frame,
    mask: DataMask<'_>,
    params: &FlowParams,
) -> Result<(FlowField, FlowTrace)> {
    params.validate()?;
    ensure_same_dims(target.dims(), neighbor.dims())?;
    // Fence pixels are filled from the surrounding background first so that
    // pre-smoothing and derivative stencils never pick up fence intensities.
    let (g0, g1) = match mask {
        DataMask::Fixed(m) => (
            fill_masked(&to_grayscale(target), m),
            to_grayscale(neighbor),
        ),
        DataMask::Occlusion {
            target: t,
            neighbor: n,
        } => (
            fill_masked(&to_grayscale(target), t),
            fill_masked(&to_grayscale(neighbor), n),
        ),
    };
    let p0 = build_pyramid(&g0, params)?;
    let p1 = build_pyramid(&g1, params)?;
    let dims = p0.dims();

    let (fixed, neighbor_masks) = match mask {
        DataMask::Fixed(m) => (mask_pyramid(m, &dims), None),
        DataMask::Occlusion { target, neighbor } => (
            mask_pyramid(target, &dims),
            Some(mask_pyramid(neighbor, &dims)),
        ),
    };

    let mut trace = FlowTrace::default();
    let coarsest = dims.len() - 1;
    let (cw, ch) = dims[coarsest];
    let mut u = Plane::filled(cw, ch, 0.0);
    let mut v = Plane::filled(cw, ch, 0.0);

    for level in (0..=coarsest).rev() {
        let (w, h) = dims[level];
        if level < coarsest {
            let (pw, ph) = dims[level + 1];
            u = upsample_component(&u, w, h, w as f64 / pw as f64);
            v = upsample_component(&v, w, h, h as f64 / ph as f64);
        }
        let i0 = &p0.levels[level];
        let i1 = &p1.levels[level];
        let level_mask = |u: &Plane, v: &Plane| -> FenceMask {
            match &neighbor_masks {
                None => fixed[level].clone(),
                Some(nm) => {
                    let nm = &nm[level];
                    FenceMask::from_fn(w, h, |x, y| {
                        fixed[level].get(x, y)
                            || nm
                                .any_in_footprint(x as f64 + u.get(x, y), y as f64 + v.get(x, y))
                                .unwrap_or(false)
                    })
                }
            }
        };

        if level == 0 {
            let m = level_mask(&u, &v);
            trace
                .finest_energies
                .push(flow_energy(i0, i1, &m, &u, &v, params.lambda));
        }

        for _ in 0..params.outer_warps_per_level {
            let mask = level_mask(&u, &v);
            let (du, dv) = solve_increment(i0, i1, &mask, &u, &v, params);
            if du.iter().chain(&dv).any(|d| !d.is_finite()) {
                return Err(Error::NonFiniteState { level });
            }

            let e_old = flow_energy(i0, i1, &mask, &u, &v, params.lambda);
            let (nu, nv, e_new) = accept_step(i0, i1, &mask, &u, &v, &du, &dv, params, e_old);
            u = nu;
            v = nv;
            if level == 0 {
                trace.finest_energies.push(e_new);
            }
        }
    }

    Ok((FlowField::from_planes(u, v)?, trace))
}

/// Chooses the first candidate update that does not raise the objective:
/// the full step (median filtered when enabled), the raw full step, then
/// halved steps. Falls back to the current flow.
#[allow(clippy::too_many_arguments)]
fn accept_step(
    i0: &Plane,
    i1: &Plane,
    mask: &FenceMask,
    u: &Plane,
    v: &Plane,
    du: &[f64],
    dv: &[f64],
    params: &FlowParams,
    e_old: f64,
) -> (Plane, Plane, f64) {
    let stepped = |scale: f64| {
        let mut nu = u.clone();
        let mut nv = v.clone();
        for (a, d) in nu.as_mut_slice().iter_mut().zip(du) {
            *a += scale * d;
        }
        for (a, d) in nv.as_mut_slice().iter_mut().zip(dv) {
            *a += scale * d;
        }
        (nu, nv)
    };

    let mut candidates = Vec::with_capacity(4);
    let (fu, fv) = stepped(1.0);
    if params.median_filter {
        candidates.push((median3x3(&fu), median3x3(&fv)));
    }
    candidates.push((fu, fv));
    candidates.push(stepped(0.5));
    candidates.push(stepped(0.25));

    for (cu, cv) in candidates {
        let e = flow_energy(i0, i1, mask, &cu, &cv, params.lambda);
        if e <= e_old {
            return (cu, cv, e);
        }
    }
    (u.clone(), v.clone(), e_old)
}

/// Linearises the data term around the current flow and solves for the
/// increment with IRLS and SOR.
fn solve_increment(
    i0: &Plane,
    i1: &Plane,
    mask: &FenceMask,
    u: &Plane,
    v: &Plane,
    params: &FlowParams,
) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = i0.dims();
    let n = w * h;
    let (wf, hf) = ((w - 1) as f64, (h - 1) as f64);

    let mut warped = Plane::filled(w, h, 0.0);
    let mut data_on = vec![false; n];
    for y in 0..h {
        for x in 0..w {
            let sx = x as f64 + u.get(x, y);
            let sy = y as f64 + v.get(x, y);
            warped.set(x, y, i1.sample_clamped(sx, sy));
            let inside = (0.0..=wf).contains(&sx) && (0.0..=hf).contains(&sy);
            data_on[y * w + x] = inside && !mask.get(x, y);
        }
    }
    let (wx, wy) = derivatives(&warped);
    let (tx, ty) = derivatives(i0);
    let ix: Vec<f64> = wx
        .as_slice()
        .iter()
        .zip(tx.as_slice())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let iy: Vec<f64> = wy
        .as_slice()
        .iter()
        .zip(ty.as_slice())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let it: Vec<f64> = warped
        .as_slice()
        .iter()
        .zip(i0.as_slice())
        .map(|(a, b)| a - b)
        .collect();

    let eps2 = params.irls_epsilon * params.irls_epsilon;
    let charbonnier = |r: f64| 1.0 / (r * r + eps2).sqrt();

    let mut system = FlowSystem {
        width: w,
        height: h,
        a11: vec![0.0; n],
        a12: vec![0.0; n],
        a22: vec![0.0; n],
        b1: vec![0.0; n],
        b2: vec![0.0; n],
        wu_h: vec![0.0; n],
        wu_v: vec![0.0; n],
        wv_h: vec![0.0; n],
        wv_v: vec![0.0; n],
        u0: u.as_slice().to_vec(),
        v0: v.as_slice().to_vec(),
    };
    let mut du = vec![0.0; n];
    let mut dv = vec![0.0; n];

    for _ in 0..params.irls_iterations {
        for i in 0..n {
            if data_on[i] {
                let r = it[i] + ix[i] * du[i] + iy[i] * dv[i];
                let psi = charbonnier(r);
                system.a11[i] = psi * ix[i] * ix[i];
                system.a12[i] = psi * ix[i] * iy[i];
                system.a22[i] = psi * iy[i] * iy[i];
                system.b1[i] = psi * ix[i] * it[i];
                system.b2[i] = psi * iy[i] * it[i];
            }
        }
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let fu = system.u0[i] + du[i];
                let fv = system.v0[i] + dv[i];
                if x + 1 < w {
                    let j = i + 1;
                    system.wu_h[i] = params.lambda * charbonnier(system.u0[j] + du[j] - fu);
                    system.wv_h[i] = params.lambda * charbonnier(system.v0[j] + dv[j] - fv);
                }
                if y + 1 < h {
                    let j = i + w;
                    system.wu_v[i] = params.lambda * charbonnier(system.u0[j] + du[j] - fu);
                    system.wv_v[i] = params.lambda * charbonnier(system.v0[j] + dv[j] - fv);
                }
            }
        }
        system.sor(&mut du, &mut dv, params.sor_iterations, params.sor_omega);
    }
    (du, dv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_masked_leaves_known_pixels_and_spreads_inward() {
        let p = Plane::from_fn(5, 5, |x, _| x as f64);
        let mask = FenceMask::from_fn(5, 5, |x, y| (1..4).contains(&x) && (1..4).contains(&y));
        let out = fill_masked(&p, &mask);
        for y in 0..5 {
            for x in 0..5 {
                let v = out.get(x, y);
                if !mask.get(x, y) {
                    assert_eq!(v, p.get(x, y));
                }
                assert!((0.0..=4.0).contains(&v));
            }
        }
        // Symmetric ring, so the centre lands on the ring's mean.
        assert!((out.get(2, 2) - 2.0).abs() < 1e-12);
        assert_eq!(fill_masked(&p, &FenceMask::full(5, 5)), p);
    }

    fn smooth_texture(w: usize, h: usize, shift: (f64, f64)) -> Frame {
        Frame::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64 - shift.0, y as f64 - shift.1);
            let g = 0.5
                + 0.2 * (0.21 * x + 0.05 * y).sin()
                + 0.15 * (0.13 * y - 0.07 * x).cos()
                + 0.1 * (0.31 * x * 0.7 + 0.29 * y).sin();
            [g, g, g]
        })
        .unwrap()
    }

    #[test]
    fn pyramid_sizes_follow_scale() {
        let p = build_pyramid(&Plane::filled(64, 64, 0.3), &FlowParams::default()).unwrap();
        assert_eq!(p.dims(), vec![(64, 64), (32, 32), (16, 16)]);
        for level in p.levels() {
            assert!(level.as_slice().iter().all(|&v| (v - 0.3).abs() < 1e-12));
        }
        let single = build_pyramid(&Plane::filled(16, 16, 0.1), &FlowParams::default()).unwrap();
        assert_eq!(single.len(), 1);
        assert!(matches!(
            build_pyramid(&Plane::filled(15, 40, 0.0), &FlowParams::default()),
            Err(Error::InputTooSmall { .. })
        ));
    }

    #[test]
    fn pyramid_rounds_odd_sizes() {
        let p = build_pyramid(&Plane::filled(90, 50, 0.0), &FlowParams::default()).unwrap();
        assert_eq!(p.dims(), vec![(90, 50), (45, 25)]);
    }

    #[test]
    fn mask_downsampling_is_conservative() {
        let m = FenceMask::from_fn(8, 8, |x, y| x == 3 && y == 6);
        let d = downsample_mask(&m, 4, 4);
        assert_eq!(d.count(), 1);
        assert!(d.get(1, 3));
    }

    #[test]
    fn warp_frame_identity_and_shifts() {
        let f = smooth_texture(10, 6, (0.0, 0.0));
        let (same, valid) = warp_frame(&f, &FlowField::zeros(10, 6)).unwrap();
        assert_eq!(same, f);
        assert_eq!(valid.count(), 60);

        let (_, none) = warp_frame(&f, &FlowField::uniform(10, 6, 10.0, 0.0)).unwrap();
        assert_eq!(none.count(), 0);

        let (shifted, valid) = warp_frame(&f, &FlowField::uniform(10, 6, 2.0, 0.0)).unwrap();
        for y in 0..6 {
            for x in 0..10 {
                if x < 8 {
                    assert!(valid.get(x, y));
                    assert_eq!(shifted.pixel(x, y), f.pixel(x + 2, y));
                } else {
                    assert!(!valid.get(x, y));
                }
            }
        }
        assert!(warp_frame(&f, &FlowField::zeros(9, 6)).is_err());
    }

    #[test]
    fn zero_motion_fixed_point() {
        let f = smooth_texture(48, 40, (0.0, 0.0));
        let flow =
            estimate_flow(&f, &f, &FenceMask::empty(48, 40), &FlowParams::default()).unwrap();
        let mean = flow.mean_endpoint_error((0.0, 0.0), |_, _| true);
        assert!(mean < 0.05, "mean magnitude {mean}");
    }

    #[test]
    fn small_translation_is_recovered() {
        let a = smooth_texture(64, 48, (0.0, 0.0));
        let b = smooth_texture(64, 48, (1.5, -0.5));
        let flow =
            estimate_flow(&a, &b, &FenceMask::empty(64, 48), &FlowParams::default()).unwrap();
        let epe = flow.mean_endpoint_error((1.5, -0.5), |x, y| {
            (4..60).contains(&x) && (4..44).contains(&y)
        });
        assert!(epe < 0.1, "epe {epe}");
    }

    #[test]
    fn finest_energy_never_increases() {
        let a = smooth_texture(64, 48, (0.0, 0.0));
        let b = smooth_texture(64, 48, (2.0, 1.0));
        let mask = FenceMask::from_fn(64, 48, |x, _| x % 9 < 2);
        let (_, trace) = estimate_flow_traced(&a, &b, &mask, &FlowParams::default()).unwrap();
        assert_eq!(trace.finest_energies.len(), 4);
        for pair in trace.finest_energies.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-6, "{:?}", trace.finest_energies);
        }
    }

    #[test]
    fn rejects_invalid_params() {
        let f = smooth_texture(32, 32, (0.0, 0.0));
        let m = FenceMask::empty(32, 32);
        for bad in [
            FlowParams {
                lambda: 0.0,
                ..Default::default()
            },
            FlowParams {
                pyramid_scale: 1.0,
                ..Default::default()
            },
            FlowParams {
                sor_omega: 2.0,
                ..Default::default()
            },
            FlowParams {
                irls_epsilon: 0.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                estimate_flow(&f, &f, &m, &bad),
                Err(Error::InvalidParameter { .. })
            ));
        }
    }
}
