//! Video de-fencing downstream of fence segmentation.
//!
//! Given frames and per-frame soft fence masks, the pipeline
//!
//! 1. refines each mask with registered predictions from its neighbours
//!    ([`refine`]),
//! 2. estimates dense background flow to each neighbour while ignoring fence
//!    pixels in the data term ([`flow`]),
//! 3. fuses the warped neighbours into a total-variation regularised estimate
//!    and copies the nearest real sample into every fence pixel ([`fusion`]),
//! 4. inpaints whatever no neighbour could see ([`inpaint`]).
//!
//! [`synth`] builds fenced sequences with exact ground truth and [`metrics`]
//! scores the results. All images hold `f64` samples in `[0, 1]`.
//!
//! ```
//! use defence_core::{synth, fusion, flow::FlowParams, refine::RefineParams, metrics};
//!
//! let spec = synth::SceneSpec { width: 48, height: 32, frame_count: 5, ..Default::default() };
//! let scene = synth::generate_scene(&spec)?;
//! let softs: Vec<_> = scene.masks.iter().map(|m| m.to_soft()).collect();
//! let params = fusion::FusionParams { n: 4, ..Default::default() };
//! let out = fusion::defence_frame(
//!     &scene.fenced_frames, &softs, 2,
//!     &RefineParams::default(), &FlowParams::default(), &params,
//! )?;
//! let before = metrics::psnr(&scene.fenced_frames[2], &scene.clean_frames[2], None)?;
//! let after = metrics::psnr(&out, &scene.clean_frames[2], None)?;
//! assert!(after > before);
//! # Ok::<(), defence_core::Error>(())
//! ```

pub mod error;
pub mod flow;
pub mod fusion;
pub mod grid;
pub mod inpaint;
pub mod io;
pub mod metrics;
pub mod refine;
pub mod registration;
pub mod synth;
pub mod tv;
pub mod window;

pub use error::{Error, Result};
pub use grid::{
    to_grayscale, FenceMask, FlowField, Frame, Plane, SoftMask, Translation, ValidityMask,
};

// The guide's code blocks run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/images.md")]
    mod images {}
    #[doc = include_str!("../../../book/src/registration.md")]
    mod registration {}
    #[doc = include_str!("../../../book/src/refinement.md")]
    mod refinement {}
    #[doc = include_str!("../../../book/src/optical-flow.md")]
    mod optical_flow {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/synthetic-scenes.md")]
    mod synthetic_scenes {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/files.md")]
    mod files {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
