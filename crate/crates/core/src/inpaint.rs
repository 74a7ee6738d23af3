//! Fast-marching inpainting.
//!
//! Hole pixels are visited in increasing distance from the hole boundary,
//! with the distance field `T` grown by a fast-marching eikonal solver. Each
//! visited pixel becomes a weighted average of first-order extrapolations
//! from already known pixels within a disk, weighted by direction (alignment
//! with `∇T`), geometric distance and level-set proximity.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{ensure_same_dims, Error, Result};
use crate::grid::{Frame, ValidityMask};

/// Default neighbourhood radius in pixels.
pub const DEFAULT_INPAINT_RADIUS: usize = 5;

const FAR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Known,
    Band,
    Inside,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    t: f64,
    index: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Min-heap on (t, index) so ties resolve in raster order.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .t
            .total_cmp(&self.t)
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Fills the pixels marked in `holes` from their surroundings.
pub fn inpaint_fast_marching(frame: &Frame, holes: &ValidityMask, radius: usize) -> Result<Frame> {
    ensure_same_dims(frame.dims(), holes.dims())?;
    if radius < 1 {
        return Err(Error::param("radius", "must be at least 1"));
    }
    if holes.is_empty() {
        return Ok(frame.clone());
    }
    if holes.count() == holes.as_slice().len() {
        return Err(Error::AllHoles);
    }

    let (w, h) = frame.dims();
    let mut pixels: Vec<[f64; 3]> = (0..w * h).map(|i| frame.pixel_at(i)).collect();
    let mut state: Vec<State> = holes
        .as_slice()
        .iter()
        .map(|&hole| if hole { State::Inside } else { State::Known })
        .collect();
    let mut t: Vec<f64> = holes
        .as_slice()
        .iter()
        .map(|&hole| if hole { FAR } else { 0.0 })
        .collect();

    let neighbors4 = |i: usize| {
        let (x, y) = (i % w, i / w);
        [
            (x > 0).then(|| i - 1),
            (x + 1 < w).then(|| i + 1),
            (y > 0).then(|| i - w),
            (y + 1 < h).then(|| i + w),
        ]
    };

    let mut heap = BinaryHeap::new();
    for i in 0..w * h {
        if state[i] == State::Known
            && neighbors4(i)
                .into_iter()
                .flatten()
                .any(|j| state[j] == State::Inside)
        {
            state[i] = State::Band;
            heap.push(Entry { t: 0.0, index: i });
        }
    }

    let offsets = disk(radius);
    while let Some(Entry { index, .. }) = heap.pop() {
        if state[index] == State::Known {
            continue;
        }
        state[index] = State::Known;
        for j in neighbors4(index).into_iter().flatten() {
            if state[j] != State::Inside {
                continue;
            }
            let (x, y) = (j % w, j / w);
            t[j] = arrival_time(&t, &state, w, h, x, y);
            pixels[j] = fill_pixel(&pixels, &t, &state, w, h, x, y, &offsets);
            state[j] = State::Band;
            heap.push(Entry { t: t[j], index: j });
        }
    }

    let data = pixels.into_iter().flatten().collect();
    Frame::new(w, h, data)
}

fn disk(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if (dx, dy) != (0, 0) && dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Smallest eikonal update over the four quadrants around `(x, y)`.
fn arrival_time(t: &[f64], state: &[State], w: usize, h: usize, x: usize, y: usize) -> f64 {
    let known = |xx: isize, yy: isize| -> Option<f64> {
        if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
            return None;
        }
        let i = yy as usize * w + xx as usize;
        (state[i] != State::Inside).then_some(t[i])
    };
    let (xi, yi) = (x as isize, y as isize);
    let mut best = FAR;
    for hx in [xi - 1, xi + 1] {
        for vy in [yi - 1, yi + 1] {
            let sol = match (known(hx, yi), known(xi, vy)) {
                (Some(a), Some(b)) => {
                    let d = a - b;
                    if d.abs() < 1.0 {
                        0.5 * (a + b + (2.0 - d * d).sqrt())
                    } else {
                        a.min(b) + 1.0
                    }
                }
                (Some(a), None) | (None, Some(a)) => a + 1.0,
                (None, None) => FAR,
            };
            best = best.min(sol);
        }
    }
    best
}

/// Central difference of `values` along one axis using only usable samples.
fn one_axis_gradient(prev: Option<f64>, center: f64, next: Option<f64>) -> f64 {
    match (prev, next) {
        (Some(p), Some(n)) => 0.5 * (n - p),
        (Some(p), None) => center - p,
        (None, Some(n)) => n - center,
        (None, None) => 0.0,
    }
}

#[allow(clippy::too_many_arguments)]
fn fill_pixel(
    pixels: &[[f64; 3]],
    t: &[f64],
    state: &[State],
    w: usize,
    h: usize,
    x: usize,
    y: usize,
    offsets: &[(isize, isize)],
) -> [f64; 3] {
    let usable = |xx: isize, yy: isize| -> Option<usize> {
        if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
            return None;
        }
        let i = yy as usize * w + xx as usize;
        (state[i] != State::Inside).then_some(i)
    };
    let (xi, yi) = (x as isize, y as isize);
    let tp = t[y * w + x];

    // Level-set normal at the pixel being filled.
    let gtx = one_axis_gradient(
        usable(xi - 1, yi).map(|i| t[i]),
        tp,
        usable(xi + 1, yi).map(|i| t[i]),
    );
    let gty = one_axis_gradient(
        usable(xi, yi - 1).map(|i| t[i]),
        tp,
        usable(xi, yi + 1).map(|i| t[i]),
    );
    let gnorm = (gtx * gtx + gty * gty).sqrt();

    let mut acc = [0.0; 3];
    let mut total = 0.0;
    for &(dx, dy) in offsets {
        let (qx, qy) = (xi + dx, yi + dy);
        let Some(qi) = usable(qx, qy) else {
            continue;
        };
        // r points from the known pixel q to the pixel being filled.
        let (rx, ry) = (-dx as f64, -dy as f64);
        let r2 = rx * rx + ry * ry;
        let r = r2.sqrt();
        let dir = if gnorm > 0.0 {
            ((rx * gtx + ry * gty) / (r * gnorm)).abs().max(1e-6)
        } else {
            1.0
        };
        let dst = 1.0 / r2;
        let lev = 1.0 / (1.0 + (t[qi] - tp).abs());
        let weight = dir * dst * lev;

        for c in 0..3 {
            let at = |xx: isize, yy: isize| usable(xx, yy).map(|i| pixels[i][c]);
            let center = pixels[qi][c];
            let gx = one_axis_gradient(at(qx - 1, qy), center, at(qx + 1, qy));
            let gy = one_axis_gradient(at(qx, qy - 1), center, at(qx, qy + 1));
            acc[c] += weight * (center + gx * rx + gy * ry);
        }
        total += weight;
    }
    if total > 0.0 {
        acc.map(|v| (v / total).clamp(0.0, 1.0))
    } else {
        pixels[y * w + x]
    }
}
