//! Temporal refinement of fence masks.
//!
//! A frame's binary fence mask is widened with every pixel that its
//! registered neighbours agree on: the neighbours' soft scores are warped
//! onto the target, averaged, thresholded and OR-ed into the target mask,
//! which is then cleaned up with a morphological closing.

use crate::error::{ensure_same_dims, Error, Result};
use crate::grid::{to_grayscale, FenceMask, Frame, Plane, SoftMask, Translation};
use crate::registration::{phase_correlate, warp_by_translation};
use crate::window::neighbor_window;

/// Score at which a soft prediction counts as fence for the frame itself.
pub const BINARY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineParams {
    /// Number of neighbouring frames averaged. Zero selects single-image
    /// mode, where the target mask is only closed.
    pub m: usize,
    /// Threshold on the averaged neighbour score.
    pub mu: f64,
    pub close_radius: usize,
    pub close_iterations: usize,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            m: 5,
            mu: 0.5,
            close_radius: 1,
            close_iterations: 1,
        }
    }
}

impl RefineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::param("mu", format!("{} is outside (0, 1]", self.mu)));
        }
        Ok(())
    }
}

/// Refines one frame's fence mask from its neighbours' soft predictions.
///
/// `transforms[i]` carries `neighbor_softs[i]` onto the target grid through
/// [`warp_by_translation`]. An empty neighbour list is accepted and yields
/// the closed target mask.
pub fn refine_mask(
    target_soft: &SoftMask,
    target_binary: &FenceMask,
    neighbor_softs: &[SoftMask],
    transforms: &[Translation],
    params: &RefineParams,
) -> Result<FenceMask> {
    params.validate()?;
    let dims = target_binary.dims();
    ensure_same_dims(dims, target_soft.dims())?;
    if neighbor_softs.len() != transforms.len() {
        return Err(Error::param(
            "transforms",
            format!(
                "{} transforms for {} neighbour masks",
                transforms.len(),
                neighbor_softs.len()
            ),
        ));
    }
    if neighbor_softs.len() > params.m {
        return Err(Error::param(
            "m",
            format!(
                "{} neighbours supplied, at most {} allowed",
                neighbor_softs.len(),
                params.m
            ),
        ));
    }
    for soft in neighbor_softs {
        ensure_same_dims(dims, soft.dims())?;
    }

    let (w, h) = dims;
    let combined = if neighbor_softs.is_empty() {
        target_binary.clone()
    } else {
        let mut sum = vec![0.0; w * h];
        for (soft, &t) in neighbor_softs.iter().zip(transforms) {
            let warped = warp_by_translation(soft, t);
            for (acc, &s) in sum.iter_mut().zip(warped.as_slice()) {
                *acc += s;
            }
        }
        let count = neighbor_softs.len() as f64;
        let bits = sum
            .iter()
            .zip(target_binary.as_slice())
            .map(|(&s, &own)| own || s / count >= params.mu)
            .collect();
        FenceMask::new(w, h, bits)?
    };

    Ok(morph_close(
        &combined,
        params.close_radius,
        params.close_iterations,
    ))
}

/// Refines the masks of the frames at `targets`, each from its `params.m`
/// nearest neighbours.
///
/// Translations come from phase correlation on luminance. A pair that
/// cannot be registered (a constant frame) is treated as unmoved.
pub fn refine_frames(
    frames: &[Frame],
    softs: &[SoftMask],
    targets: &[usize],
    params: &RefineParams,
) -> Result<Vec<FenceMask>> {
    params.validate()?;
    if frames.len() != softs.len() {
        return Err(Error::param(
            "soft_masks",
            format!("{} masks for {} frames", softs.len(), frames.len()),
        ));
    }
    let grays: Vec<Plane> = frames.iter().map(to_grayscale).collect();
    targets
        .iter()
        .map(|&o| {
            if o >= frames.len() {
                return Err(Error::TargetOutOfRange {
                    target: o,
                    len: frames.len(),
                });
            }
            let neighbors = neighbor_window(frames.len(), o, params.m);
            let transforms = neighbors
                .iter()
                .map(|&k| neighbor_to_target(&grays[k], &grays[o]))
                .collect::<Result<Vec<_>>>()?;
            let neighbor_softs: Vec<SoftMask> =
                neighbors.iter().map(|&k| softs[k].clone()).collect();
            refine_mask(
                &softs[o],
                &softs[o].threshold(BINARY_THRESHOLD),
                &neighbor_softs,
                &transforms,
                params,
            )
        })
        .collect()
}

/// Refines every frame of a sequence.
pub fn refine_sequence(
    frames: &[Frame],
    softs: &[SoftMask],
    params: &RefineParams,
) -> Result<Vec<FenceMask>> {
    let all: Vec<usize> = (0..frames.len()).collect();
    refine_frames(frames, softs, &all, params)
}

fn neighbor_to_target(neighbor: &Plane, target: &Plane) -> Result<Translation> {
    match phase_correlate(neighbor, target) {
        Ok(t) => Ok(t),
        Err(Error::DegenerateInput(_)) => Ok(Translation::ZERO),
        Err(e) => Err(e),
    }
}

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Dilation by a disk. Pixels outside the grid count as background.
pub fn dilate(mask: &FenceMask, radius: usize) -> FenceMask {
    morph(mask, radius, false)
}

/// Erosion by a disk. Pixels outside the grid count as foreground, which
/// makes this the adjoint of [`dilate`] and keeps closings extensive at the
/// border.
pub fn erode(mask: &FenceMask, radius: usize) -> FenceMask {
    morph(mask, radius, true)
}

fn morph(mask: &FenceMask, radius: usize, erode: bool) -> FenceMask {
    if radius == 0 {
        return mask.clone();
    }
    let offsets = disk_offsets(radius);
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    FenceMask::from_fn(mask.width(), mask.height(), |x, y| {
        let hits = offsets.iter().filter_map(|&(dx, dy)| {
            let (sx, sy) = (x as isize + dx, y as isize + dy);
            (sx >= 0 && sy >= 0 && sx < w && sy < h).then(|| mask.get(sx as usize, sy as usize))
        });
        if erode {
            hits.into_iter().all(|b| b)
        } else {
            hits.into_iter().any(|b| b)
        }
    })
}

/// Morphological closing with a disk of `radius`: `iterations` dilations
/// followed by as many erosions. Radius zero is the identity.
pub fn morph_close(mask: &FenceMask, radius: usize, iterations: usize) -> FenceMask {
    if radius == 0 || iterations == 0 {
        return mask.clone();
    }
    let mut out = mask.clone();
    for _ in 0..iterations {
        out = dilate(&out, radius);
    }
    for _ in 0..iterations {
        out = erode(&out, radius);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_with_hole() -> FenceMask {
        FenceMask::from_fn(9, 9, |x, y| {
            (2..7).contains(&x) && (2..7).contains(&y) && !(x == 4 && y == 4)
        })
    }

    #[test]
    fn close_radius_zero_is_identity() {
        let m = block_with_hole();
        assert_eq!(morph_close(&m, 0, 3), m);
    }

    #[test]
    fn close_fills_single_hole() {
        let closed = morph_close(&block_with_hole(), 1, 1);
        assert!(closed.get(4, 4));
        let block = FenceMask::from_fn(9, 9, |x, y| (2..7).contains(&x) && (2..7).contains(&y));
        assert_eq!(closed, block);
    }

    #[test]
    fn close_of_empty_is_empty() {
        let e = FenceMask::empty(7, 5);
        for r in 0..4 {
            assert!(morph_close(&e, r, 2).is_empty());
        }
    }

    #[test]
    fn close_is_extensive_at_borders() {
        let m = FenceMask::from_fn(6, 6, |x, y| x == 0 || y == 5);
        assert!(m.is_subset_of(&morph_close(&m, 2, 1)));
    }

    #[test]
    fn identical_neighbor_gives_closed_target() {
        let target = block_with_hole();
        let soft = target.to_soft();
        let out = refine_mask(
            &soft,
            &target,
            std::slice::from_ref(&soft),
            &[Translation::ZERO],
            &RefineParams::default(),
        )
        .unwrap();
        assert_eq!(out, morph_close(&target, 1, 1));
    }

    #[test]
    fn zero_neighbor_scores_give_closed_target() {
        let target = block_with_hole();
        let zeros = SoftMask::zeros(9, 9);
        let out = refine_mask(
            &zeros,
            &target,
            &vec![zeros.clone(); 3],
            &[Translation::ZERO; 3],
            &RefineParams::default(),
        )
        .unwrap();
        assert_eq!(out, morph_close(&target, 1, 1));
    }

    #[test]
    fn unanimous_neighbors_restore_missing_pixel() {
        // A vertical wire whose middle pixel the target prediction missed.
        let truth = FenceMask::from_fn(11, 11, |x, _| x == 5);
        let target = FenceMask::from_fn(11, 11, |x, y| x == 5 && y != 5);
        let params = RefineParams {
            close_radius: 0,
            ..RefineParams::default()
        };
        // Each neighbour sees the wire shifted by k columns; the transform
        // brings it back onto the target grid.
        let mut softs = Vec::new();
        let mut transforms = Vec::new();
        for k in 1..=5 {
            let shifted = FenceMask::from_fn(11, 11, |x, _| x == 5 + k % 3);
            softs.push(shifted.to_soft());
            transforms.push(Translation::new(-((k % 3) as f64), 0.0));
        }
        let out = refine_mask(&target.to_soft(), &target, &softs, &transforms, &params).unwrap();
        assert!(out.get(5, 5));
        assert_eq!(out, truth);
    }

    #[test]
    fn empty_neighbor_list_is_lenient() {
        let target = block_with_hole();
        let out = refine_mask(
            &target.to_soft(),
            &target,
            &[],
            &[],
            &RefineParams::default(),
        )
        .unwrap();
        assert_eq!(out, morph_close(&target, 1, 1));
    }

    #[test]
    fn rejects_mismatches() {
        let target = FenceMask::empty(5, 5);
        let soft = SoftMask::zeros(5, 5);
        let other = SoftMask::zeros(4, 5);
        let p = RefineParams::default();
        assert!(matches!(
            refine_mask(&soft, &target, &[other], &[Translation::ZERO], &p),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(refine_mask(&soft, &target, std::slice::from_ref(&soft), &[], &p).is_err());
        let bad_mu = RefineParams { mu: 0.0, ..p };
        assert!(refine_mask(&soft, &target, &[], &[], &bad_mu).is_err());
        let too_many = vec![soft.clone(); 6];
        assert!(refine_mask(&soft, &target, &too_many, &[Translation::ZERO; 6], &p).is_err());
    }
}
