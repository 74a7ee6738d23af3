//! Proximal operators of anisotropic total variation.
//!
//! The 1D operator
//!
//! ```text
//! prox(y) = argmin_x ½‖x − y‖² + λ Σ |x[i+1] − x[i]|
//! ```
//!
//! is solved exactly with the taut-string construction: the running sum of
//! the solution is the shortest path through a tube of half-width `λ` around
//! the running sum of `y`, pinned at both ends. The 2D operator splits the
//! anisotropic penalty into its row and column parts and combines the two
//! exact 1D operators with Dykstra's proximal scheme.

use crate::grid::Plane;

/// Exact 1D TV proximal operator.
pub fn prox_tv_1d(signal: &[f64], lambda: f64) -> Vec<f64> {
    let mut out = signal.to_vec();
    prox_tv_1d_in_place(&mut out, lambda, &mut Vec::new());
    out
}

/// `½‖x − y‖² + λ Σ |x[i+1] − x[i]|`.
pub fn tv_1d_objective(x: &[f64], y: &[f64], lambda: f64) -> f64 {
    let fit: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let tv: f64 = x.windows(2).map(|p| (p[1] - p[0]).abs()).sum();
    0.5 * fit + lambda * tv
}

/// Taut string on `values`, reusing `cumsum` as scratch space.
fn prox_tv_1d_in_place(values: &mut [f64], lambda: f64, cumsum: &mut Vec<f64>) {
    let n = values.len();
    if n < 2 || lambda <= 0.0 || values.iter().all(|&v| v == values[0]) {
        return;
    }
    cumsum.clear();
    cumsum.push(0.0);
    let mut acc = 0.0;
    for &v in values.iter() {
        acc += v;
        cumsum.push(acc);
    }
    let total = cumsum[n];
    let upper = |i: usize| {
        if i == 0 {
            0.0
        } else if i == n {
            total
        } else {
            cumsum[i] + lambda
        }
    };
    let lower = |i: usize| {
        if i == 0 {
            0.0
        } else if i == n {
            total
        } else {
            cumsum[i] - lambda
        }
    };

    // Funnel walk: from the current knot `a` (string height `sa`) keep the
    // feasible slope interval [lo, hi]. When a tube wall crosses the
    // interval, the string bends at the wall point that set the violated
    // bound and the walk restarts from there.
    let mut a = 0usize;
    let mut sa = 0.0;
    while a < n {
        let mut hi = f64::INFINITY;
        let mut hi_k = a;
        let mut lo = f64::NEG_INFINITY;
        let mut lo_k = a;
        let mut knot = None;
        for j in a + 1..=n {
            let d = (j - a) as f64;
            let su = (upper(j) - sa) / d;
            let sl = (lower(j) - sa) / d;
            if sl > hi {
                knot = Some((hi_k, hi, upper(hi_k)));
                break;
            }
            if su < lo {
                knot = Some((lo_k, lo, lower(lo_k)));
                break;
            }
            if su <= hi {
                hi = su;
                hi_k = j;
            }
            if sl >= lo {
                lo = sl;
                lo_k = j;
            }
        }
        match knot {
            Some((k, slope, height)) => {
                values[a..k].fill(slope);
                a = k;
                sa = height;
            }
            None => {
                let slope = (total - sa) / (n - a) as f64;
                values[a..n].fill(slope);
                a = n;
            }
        }
    }
}

/// `½‖X − Y‖² + λ (Σ |∂ₓX| + Σ |∂ᵧX|)` with forward differences.
pub fn tv_2d_objective(x: &Plane, y: &Plane, lambda: f64) -> f64 {
    let (w, h) = x.dims();
    let fit: f64 = x
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let mut tv = 0.0;
    for yy in 0..h {
        for xx in 0..w {
            let v = x.get(xx, yy);
            if xx + 1 < w {
                tv += (x.get(xx + 1, yy) - v).abs();
            }
            if yy + 1 < h {
                tv += (x.get(xx, yy + 1) - v).abs();
            }
        }
    }
    0.5 * fit + lambda * tv
}

/// Stopping rule for [`prox_tv_2d_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxOptions {
    pub max_passes: usize,
    /// Stop once `‖xₖ₊₁ − xₖ‖ / ‖xₖ₊₁‖` drops below this.
    pub tolerance: f64,
}

impl Default for ProxOptions {
    fn default() -> Self {
        Self {
            max_passes: 50,
            tolerance: 1e-5,
        }
    }
}

/// Approximate 2D anisotropic TV prox; see [`prox_tv_2d_traced`].
pub fn prox_tv_2d_with(image: &Plane, lambda: f64, options: ProxOptions) -> Plane {
    prox_tv_2d_traced(image, lambda, options).0
}

/// Dykstra alternation of exact row and column passes.
///
/// Also returns the objective after each pass.
pub fn prox_tv_2d_traced(image: &Plane, lambda: f64, options: ProxOptions) -> (Plane, Vec<f64>) {
    let (w, h) = image.dims();
    if lambda <= 0.0 || w * h == 0 {
        return (image.clone(), Vec::new());
    }
    let n = w * h;
    let mut x = image.as_slice().to_vec();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut line = Vec::with_capacity(w.max(h));
    let mut scratch = Vec::with_capacity(w.max(h) + 1);
    let mut trace = Vec::new();

    for _ in 0..options.max_passes {
        // Rows: z = prox_rows(x + p), p ← x + p − z.
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = x[i] + p[i];
        }
        for row in z.chunks_exact_mut(w) {
            prox_tv_1d_in_place(row, lambda, &mut scratch);
        }
        for i in 0..n {
            p[i] += x[i] - z[i];
        }

        // Columns: next = prox_cols(z + q), q ← z + q − next.
        for col in 0..w {
            line.clear();
            line.extend((0..h).map(|r| z[r * w + col] + q[r * w + col]));
            prox_tv_1d_in_place(&mut line, lambda, &mut scratch);
            for (r, &v) in line.iter().enumerate() {
                next[r * w + col] = v;
            }
        }
        for i in 0..n {
            q[i] += z[i] - next[i];
        }

        let diff: f64 = next.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
        let norm: f64 = next.iter().map(|a| a * a).sum();
        std::mem::swap(&mut x, &mut next);

        let current = Plane::new(w, h, x.clone()).expect("same dimensions");
        trace.push(tv_2d_objective(&current, image, lambda));
        if diff.sqrt() <= options.tolerance * norm.sqrt().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    (Plane::new(w, h, x).expect("same dimensions"), trace)
}
