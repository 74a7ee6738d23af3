//! Multi-frame content recovery.
//!
//! Neighbouring frames are warped onto the target with occlusion-aware
//! flow. Their visible, non-fence samples are averaged with
//! temporal-distance weights and the average is regularised with total
//! variation, giving a clean but slightly smoothed estimate `X̂`. Every fence
//! pixel of the target is then replaced by the real warped sample that lies
//! closest to `X̂`, which keeps the texture of an actual frame instead of the
//! blurred mean. Pixels that no neighbour ever sees are inpainted.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use crate::error::{ensure_same_dims, Error, Result};
use crate::flow::{estimate_flow_occlusion_aware, warp_frame, warp_mask_above, FlowParams};
use crate::grid::{FenceMask, FlowField, Frame, Plane, SoftMask, ValidityMask};
use crate::inpaint::{inpaint_fast_marching, DEFAULT_INPAINT_RADIUS};
use crate::refine::{refine_frames, RefineParams};
use crate::tv::{prox_tv_2d_with, ProxOptions};
use crate::window::{neighbor_window, reciprocal_distance_weights};

/// Fence pixels contributing at most this bilinear weight to a warped sample
/// do not make the sample invisible.
pub const FENCE_WEIGHT_TOLERANCE: f64 = 0.01;

/// Marks a pixel that no neighbour can supply.
pub const SENTINEL_NONE: u32 = u32::MAX;

/// How fusion weights depend on temporal distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightRule {
    /// `w_k ∝ 1 / |k − target|`, normalised to unit sum.
    #[default]
    ReciprocalDistance,
}

impl WeightRule {
    pub fn weights(self, target: usize, neighbors: &[usize]) -> Vec<f64> {
        match self {
            WeightRule::ReciprocalDistance => reciprocal_distance_weights(target, neighbors),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    /// Number of neighbouring frames fused into the target.
    pub n: usize,
    /// Weight of the TV term of the fusion objective.
    pub lambda_fusion: f64,
    pub weight_rule: WeightRule,
    pub prox_max_passes: usize,
    pub prox_tolerance: f64,
    /// Divide the weighted sum by the visible weight at each pixel. When off,
    /// occluded samples simply contribute zero.
    pub renormalize: bool,
    pub inpaint_radius: usize,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            n: 6,
            lambda_fusion: 0.0005,
            weight_rule: WeightRule::ReciprocalDistance,
            prox_max_passes: 50,
            prox_tolerance: 1e-5,
            renormalize: true,
            inpaint_radius: DEFAULT_INPAINT_RADIUS,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("n", "at least one neighbour is required"));
        }
        if !(self.lambda_fusion >= 0.0 && self.lambda_fusion.is_finite()) {
            return Err(Error::param(
                "lambda_fusion",
                format!("{} must be >= 0", self.lambda_fusion),
            ));
        }
        if self.inpaint_radius == 0 {
            return Err(Error::param("inpaint_radius", "must be at least 1"));
        }
        Ok(())
    }

    pub fn prox_options(&self) -> ProxOptions {
        ProxOptions {
            max_passes: self.prox_max_passes,
            tolerance: self.prox_tolerance,
        }
    }
}

/// Approximate TV prox of one channel, using the stopping rule in `params`.
pub fn prox_tv_2d(image: &Plane, lambda: f64, params: &FusionParams) -> Plane {
    prox_tv_2d_with(image, lambda, params.prox_options())
}

/// Per-pixel index of the neighbour chosen as the content source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceIndexMap {
    width: usize,
    height: usize,
    indices: Vec<u32>,
}

impl SourceIndexMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Raw entries, [`SENTINEL_NONE`] where no neighbour is feasible.
    pub fn as_slice(&self) -> &[u32] {
        &self.indices
    }

    pub fn get(&self, x: usize, y: usize) -> Option<usize> {
        match self.indices[y * self.width + x] {
            SENTINEL_NONE => None,
            i => Some(i as usize),
        }
    }
}

fn check_stack(frames: &[Frame], masks: &[ValidityMask]) -> Result<(usize, usize)> {
    let first = frames
        .first()
        .ok_or(Error::EmptyInput("no neighbour frames"))?;
    let dims = first.dims();
    if masks.len() != frames.len() {
        return Err(Error::param(
            "warped_nonfence",
            format!("{} masks for {} frames", masks.len(), frames.len()),
        ));
    }
    for f in frames {
        ensure_same_dims(dims, f.dims())?;
    }
    for m in masks {
        ensure_same_dims(dims, m.dims())?;
    }
    Ok(dims)
}

/// TV-regularised weighted mean of the visible warped neighbours.
///
/// Returns `X̂` and the grid of pixels with no visible sample at all. Those
/// pixels take the value of the nearest covered pixel before regularisation
/// so that they do not drag their surroundings.
pub fn fuse_weighted_mean(
    warped_neighbors: &[Frame],
    warped_nonfence: &[ValidityMask],
    weights: &[f64],
    params: &FusionParams,
) -> Result<(Frame, ValidityMask)> {
    let (w, h) = check_stack(warped_neighbors, warped_nonfence)?;
    if weights.len() != warped_neighbors.len() {
        return Err(Error::param(
            "weights",
            format!(
                "{} weights for {} frames",
                weights.len(),
                warped_neighbors.len()
            ),
        ));
    }
    let n = w * h;
    let mut data = vec![[0.0f64; 3]; n];
    let mut mass = vec![0.0f64; n];
    for ((frame, visible), &wk) in warped_neighbors.iter().zip(warped_nonfence).zip(weights) {
        for i in 0..n {
            if visible.as_slice()[i] {
                let p = frame.pixel_at(i);
                for c in 0..3 {
                    data[i][c] += wk * p[c];
                }
                mass[i] += wk;
            }
        }
    }
    let uncovered: Vec<bool> = mass.iter().map(|&m| m <= 0.0).collect();
    if params.renormalize {
        for (d, &m) in data.iter_mut().zip(&mass) {
            if m > 0.0 {
                for v in d.iter_mut() {
                    *v /= m;
                }
            }
        }
    }
    fill_from_nearest(&mut data, &uncovered, w, h);

    // The fusion objective is ‖X − B‖² + λ‖∇X‖₁, i.e. the ½-scaled prox at λ/2.
    let prox_lambda = 0.5 * params.lambda_fusion;
    let channels: Vec<Plane> = (0..3)
        .map(|c| {
            let plane =
                Plane::new(w, h, data.iter().map(|p| p[c]).collect()).expect("dimensions match");
            let mut out = prox_tv_2d(&plane, prox_lambda, params);
            for v in out.as_mut_slice() {
                *v = v.clamp(0.0, 1.0);
            }
            out
        })
        .collect();
    let x_hat = Frame::from_channels([&channels[0], &channels[1], &channels[2]])?;
    Ok((x_hat, FenceMask::new(w, h, uncovered)?))
}

/// Copies each uncovered pixel from its nearest covered pixel (4-connected
/// breadth-first order). Leaves everything untouched if nothing is covered.
fn fill_from_nearest(data: &mut [[f64; 3]], uncovered: &[bool], w: usize, h: usize) {
    let mut done: Vec<bool> = uncovered.iter().map(|&u| !u).collect();
    let mut queue: VecDeque<usize> = (0..w * h).filter(|&i| done[i]).collect();
    if queue.is_empty() {
        return;
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let around = [
            (x > 0).then(|| i - 1),
            (x + 1 < w).then(|| i + 1),
            (y > 0).then(|| i - w),
            (y + 1 < h).then(|| i + w),
        ];
        for j in around.into_iter().flatten() {
            if !done[j] {
                done[j] = true;
                data[j] = data[i];
                queue.push_back(j);
            }
        }
    }
}

/// For each pixel, the feasible neighbour whose warped colour is nearest to
/// `x_hat` in squared RGB distance.
///
/// Ties go to the smaller index; callers order neighbours by temporal
/// distance so this also prefers the temporally closest frame.
pub fn nearest_source_index(
    x_hat: &Frame,
    warped_neighbors: &[Frame],
    warped_nonfence: &[ValidityMask],
) -> Result<SourceIndexMap> {
    let (w, h) = check_stack(warped_neighbors, warped_nonfence)?;
    ensure_same_dims((w, h), x_hat.dims())?;
    let indices = (0..w * h)
        .map(|i| {
            let target = x_hat.pixel_at(i);
            let mut best = SENTINEL_NONE;
            let mut best_d = f64::INFINITY;
            for (k, (frame, visible)) in warped_neighbors.iter().zip(warped_nonfence).enumerate() {
                if !visible.as_slice()[i] {
                    continue;
                }
                let p = frame.pixel_at(i);
                let d: f64 = (0..3).map(|c| (p[c] - target[c]).powi(2)).sum();
                if d < best_d {
                    best_d = d;
                    best = k as u32;
                }
            }
            best
        })
        .collect();
    Ok(SourceIndexMap {
        width: w,
        height: h,
        indices,
    })
}

/// Keeps non-fence pixels of `target` and replaces fence pixels with the
/// warped neighbour named by `index_map`.
///
/// Fence pixels without a source keep their original value and are reported
/// in the returned hole grid.
pub fn recover_and_composite(
    target: &Frame,
    refined_mask: &FenceMask,
    index_map: &SourceIndexMap,
    warped_neighbors: &[Frame],
) -> Result<(Frame, ValidityMask)> {
    let dims = target.dims();
    ensure_same_dims(dims, refined_mask.dims())?;
    ensure_same_dims(dims, index_map.dims())?;
    for f in warped_neighbors {
        ensure_same_dims(dims, f.dims())?;
    }
    let n = dims.0 * dims.1;
    let mut data = target.as_slice().to_vec();
    let mut holes = vec![false; n];
    for i in 0..n {
        if !refined_mask.as_slice()[i] {
            continue;
        }
        match index_map.indices[i] {
            SENTINEL_NONE => holes[i] = true,
            k => {
                let source = warped_neighbors.get(k as usize).ok_or_else(|| {
                    Error::param("index_map", format!("index {k} has no warped neighbour"))
                })?;
                data[i * 3..i * 3 + 3].copy_from_slice(&source.pixel_at(i));
            }
        }
    }
    Ok((
        Frame::new(dims.0, dims.1, data)?,
        FenceMask::new(dims.0, dims.1, holes)?,
    ))
}

/// Wall-clock time spent in each stage of [`defence_with_masks`].
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimings {
    pub refine: Duration,
    pub flow: Duration,
    pub fusion: Duration,
    pub recovery: Duration,
    pub inpaint: Duration,
}

/// Everything produced while de-fencing one frame.
#[derive(Debug, Clone)]
pub struct DefenceReport {
    pub frame: Frame,
    /// Sequence indices of the neighbours used, nearest first.
    pub neighbors: Vec<usize>,
    pub weights: Vec<f64>,
    pub flows: Vec<FlowField>,
    pub refined_mask: FenceMask,
    pub x_hat: Frame,
    pub uncovered: ValidityMask,
    pub index_map: SourceIndexMap,
    /// Fence pixels left for inpainting.
    pub holes: ValidityMask,
    pub timings: StageTimings,
}

/// De-fences `frames[target_index]`; see [`defence_frame_report`].
pub fn defence_frame(
    frames: &[Frame],
    soft_masks: &[SoftMask],
    target_index: usize,
    refine: &RefineParams,
    flow: &FlowParams,
    fusion: &FusionParams,
) -> Result<Frame> {
    defence_frame_report(frames, soft_masks, target_index, refine, flow, fusion).map(|r| r.frame)
}

/// Refines the masks of the target and its fusion neighbours, then runs
/// [`defence_with_masks`].
pub fn defence_frame_report(
    frames: &[Frame],
    soft_masks: &[SoftMask],
    target_index: usize,
    refine: &RefineParams,
    flow: &FlowParams,
    fusion: &FusionParams,
) -> Result<DefenceReport> {
    fusion.validate()?;
    check_target(frames.len(), target_index)?;
    let neighbors = neighbor_window(frames.len(), target_index, fusion.n);
    if neighbors.is_empty() {
        return Err(Error::NeighborWindowEmpty {
            target: target_index,
            len: frames.len(),
        });
    }
    let started = Instant::now();
    let mut wanted = vec![target_index];
    wanted.extend(&neighbors);
    let refined = refine_frames(frames, soft_masks, &wanted, refine)?;
    let mut masks: Vec<Option<FenceMask>> = vec![None; frames.len()];
    for (&i, m) in wanted.iter().zip(refined) {
        masks[i] = Some(m);
    }
    let refine_time = started.elapsed();

    let mut report = defence_with_masks(frames, &masks, target_index, flow, fusion)?;
    report.timings.refine = refine_time;
    Ok(report)
}

fn check_target(len: usize, target: usize) -> Result<()> {
    if target >= len {
        return Err(Error::TargetOutOfRange { target, len });
    }
    Ok(())
}

/// De-fences one frame from already refined masks.
///
/// `refined[i]` must be present for the target and for each of its `n`
/// nearest neighbours; other entries are ignored.
pub fn defence_with_masks(
    frames: &[Frame],
    refined: &[Option<FenceMask>],
    target_index: usize,
    flow: &FlowParams,
    fusion: &FusionParams,
) -> Result<DefenceReport> {
    fusion.validate()?;
    flow.validate()?;
    check_target(frames.len(), target_index)?;
    if refined.len() != frames.len() {
        return Err(Error::param(
            "refined",
            format!("{} masks for {} frames", refined.len(), frames.len()),
        ));
    }
    let neighbors = neighbor_window(frames.len(), target_index, fusion.n);
    if neighbors.is_empty() {
        return Err(Error::NeighborWindowEmpty {
            target: target_index,
            len: frames.len(),
        });
    }
    let mask_of = |i: usize| {
        refined[i]
            .as_ref()
            .ok_or_else(|| Error::param("refined", format!("mask for frame {i} is missing")))
    };
    let target = &frames[target_index];
    let target_mask = mask_of(target_index)?;
    ensure_same_dims(target.dims(), target_mask.dims())?;

    let mut timings = StageTimings::default();
    let clock = Instant::now();
    let mut flows = Vec::with_capacity(neighbors.len());
    let mut warped = Vec::with_capacity(neighbors.len());
    let mut visible = Vec::with_capacity(neighbors.len());
    for &k in &neighbors {
        let neighbor_mask = mask_of(k)?;
        let f =
            estimate_flow_occlusion_aware(target, &frames[k], target_mask, neighbor_mask, flow)?;
        let (frame, in_bounds) = warp_frame(&frames[k], &f)?;
        let fence = warp_mask_above(neighbor_mask, &f, true, FENCE_WEIGHT_TOLERANCE)?;
        let nonfence = FenceMask::from_fn(frame.width(), frame.height(), |x, y| {
            in_bounds.get(x, y) && !fence.get(x, y)
        });
        flows.push(f);
        warped.push(frame);
        visible.push(nonfence);
    }
    timings.flow = clock.elapsed();

    let clock = Instant::now();
    let weights = fusion.weight_rule.weights(target_index, &neighbors);
    let (x_hat, uncovered) = fuse_weighted_mean(&warped, &visible, &weights, fusion)?;
    timings.fusion = clock.elapsed();

    let clock = Instant::now();
    let index_map = nearest_source_index(&x_hat, &warped, &visible)?;
    let (composite, holes) = recover_and_composite(target, target_mask, &index_map, &warped)?;
    timings.recovery = clock.elapsed();

    let clock = Instant::now();
    let frame = if holes.is_empty() {
        composite
    } else {
        inpaint_fast_marching(&composite, &holes, fusion.inpaint_radius)?
    };
    timings.inpaint = clock.elapsed();

    Ok(DefenceReport {
        frame,
        neighbors,
        weights,
        flows,
        refined_mask: target_mask.clone(),
        x_hat,
        uncovered,
        index_map,
        holes,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(w: usize, h: usize, v: f64) -> Frame {
        Frame::filled(w, h, [v; 3]).unwrap()
    }

    #[test]
    fn single_visible_neighbor_passes_through() {
        let f = Frame::from_fn(5, 4, |x, y| [x as f64 / 5.0, y as f64 / 4.0, 0.5]).unwrap();
        let params = FusionParams {
            lambda_fusion: 0.0,
            ..Default::default()
        };
        let (x_hat, uncovered) = fuse_weighted_mean(
            std::slice::from_ref(&f),
            &[FenceMask::full(5, 4)],
            &[1.0],
            &params,
        )
        .unwrap();
        assert_eq!(x_hat, f);
        assert!(uncovered.is_empty());
    }

    #[test]
    fn equal_weights_average() {
        let params = FusionParams {
            lambda_fusion: 0.0,
            ..Default::default()
        };
        let (x_hat, _) = fuse_weighted_mean(
            &[solid(3, 3, 0.2), solid(3, 3, 0.6)],
            &[FenceMask::full(3, 3), FenceMask::full(3, 3)],
            &[0.5, 0.5],
            &params,
        )
        .unwrap();
        assert!((x_hat.pixel(1, 1)[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn occluded_everywhere_is_uncovered() {
        let hidden = FenceMask::from_fn(4, 4, |x, y| (x, y) != (2, 2));
        let (x_hat, uncovered) = fuse_weighted_mean(
            &[solid(4, 4, 0.3), solid(4, 4, 0.9)],
            &[hidden.clone(), hidden],
            &[0.5, 0.5],
            &FusionParams::default(),
        )
        .unwrap();
        assert!(uncovered.get(2, 2));
        assert_eq!(uncovered.count(), 1);
        assert!(x_hat.pixel(2, 2)[0] > 0.0);
    }

    #[test]
    fn renormalization_flag() {
        let half = FenceMask::from_fn(2, 1, |x, _| x == 0);
        let params = FusionParams {
            lambda_fusion: 0.0,
            renormalize: false,
            ..Default::default()
        };
        let (biased, _) = fuse_weighted_mean(
            &[solid(2, 1, 0.8), solid(2, 1, 0.8)],
            &[FenceMask::full(2, 1), half],
            &[0.5, 0.5],
            &params,
        )
        .unwrap();
        assert!((biased.pixel(0, 0)[0] - 0.8).abs() < 1e-12);
        assert!((biased.pixel(1, 0)[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn fusion_rejects_empty_and_mismatched() {
        let p = FusionParams::default();
        assert!(matches!(
            fuse_weighted_mean(&[], &[], &[], &p),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            fuse_weighted_mean(&[solid(2, 2, 0.1)], &[FenceMask::full(3, 2)], &[1.0], &p),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn index_prefers_exact_match_and_respects_feasibility() {
        let x_hat = solid(2, 2, 0.5);
        let near = solid(2, 2, 0.5);
        let far = solid(2, 2, 0.9);
        let blocked = FenceMask::from_fn(2, 2, |x, y| (x, y) != (1, 1));
        let map = nearest_source_index(
            &x_hat,
            &[far.clone(), near.clone()],
            &[FenceMask::full(2, 2), blocked.clone()],
        )
        .unwrap();
        assert_eq!(map.get(0, 0), Some(1));
        assert_eq!(map.get(1, 1), Some(0));

        let map = nearest_source_index(&x_hat, &[near], &[FenceMask::empty(2, 2)]).unwrap();
        assert!(map.as_slice().iter().all(|&i| i == SENTINEL_NONE));
    }

    #[test]
    fn ties_go_to_the_first_neighbor() {
        let x_hat = solid(1, 1, 0.5);
        let map = nearest_source_index(
            &x_hat,
            &[solid(1, 1, 0.4), solid(1, 1, 0.6)],
            &[FenceMask::full(1, 1), FenceMask::full(1, 1)],
        )
        .unwrap();
        assert_eq!(map.get(0, 0), Some(0));
    }

    #[test]
    fn composite_contract() {
        let target = solid(3, 2, 0.1);
        let source = solid(3, 2, 0.7);
        let all = SourceIndexMap {
            width: 3,
            height: 2,
            indices: vec![0; 6],
        };
        let (out, holes) = recover_and_composite(
            &target,
            &FenceMask::empty(3, 2),
            &all,
            std::slice::from_ref(&source),
        )
        .unwrap();
        assert_eq!(out, target);
        assert!(holes.is_empty());

        let (out, _) = recover_and_composite(
            &target,
            &FenceMask::full(3, 2),
            &all,
            std::slice::from_ref(&source),
        )
        .unwrap();
        assert_eq!(out, source);

        let none = SourceIndexMap {
            width: 3,
            height: 2,
            indices: vec![0, SENTINEL_NONE, 0, 0, 0, 0],
        };
        let (out, holes) =
            recover_and_composite(&target, &FenceMask::full(3, 2), &none, &[source]).unwrap();
        assert!(holes.get(1, 0));
        assert_eq!(holes.count(), 1);
        assert_eq!(out.pixel(1, 0), [0.1; 3]);
    }

    #[test]
    fn params_validation() {
        assert!(FusionParams {
            n: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(FusionParams {
            lambda_fusion: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(FusionParams::default().validate().is_ok());
    }

    #[test]
    fn single_frame_has_no_window() {
        let frames = vec![solid(20, 20, 0.5)];
        let softs = vec![SoftMask::zeros(20, 20)];
        let err = defence_frame(
            &frames,
            &softs,
            0,
            &RefineParams::default(),
            &FlowParams::default(),
            &FusionParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NeighborWindowEmpty { .. }));
    }
}
