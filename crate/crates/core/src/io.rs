//! File interchange: PNG frames and masks, frame sequences, flow files and
//! `key = value` configuration text.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::fusion::FusionParams;
use crate::grid::{FenceMask, FlowField, Frame, SoftMask};
use crate::refine::RefineParams;
use crate::synth::{BackgroundKind, FencePattern, FenceSpec, SceneSpec};

/// First four bytes of a flow file, as a little-endian `f32`.
pub const FLOW_MAGIC: f32 = 202021.25;

pub const FRAME_PREFIX: &str = "frame";
pub const MASK_PREFIX: &str = "mask";

fn decode_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn encode_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Encode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn quantize(v: f64) -> u8 {
    (v * 255.0).round_ties_even().clamp(0.0, 255.0) as u8
}

/// Loads any PNG as RGB with channels scaled to `[0, 1]`.
pub fn load_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| decode_error(path, e))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .into_raw()
        .into_iter()
        .map(|b| b as f64 / 255.0)
        .collect();
    Frame::new(w, h, data)
}

/// Saves an 8-bit RGB PNG, rounding half to even.
pub fn save_frame(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = frame.as_slice().iter().map(|&v| quantize(v)).collect();
    let img: RgbImage =
        ImageBuffer::<Rgb<u8>, _>::from_raw(frame.width() as u32, frame.height() as u32, raw)
            .expect("buffer sized from the frame");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| encode_error(path, e))
}

fn load_gray(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path)
        .map_err(|e| decode_error(path, e))?
        .to_luma8())
}

fn save_gray(raw: Vec<u8>, width: usize, height: usize, path: &Path) -> Result<()> {
    let img: GrayImage = ImageBuffer::<Luma<u8>, _>::from_raw(width as u32, height as u32, raw)
        .expect("buffer sized from the mask");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| encode_error(path, e))
}

/// Loads a binary mask; grey levels of 128 and above are fence.
pub fn load_mask(path: impl AsRef<Path>) -> Result<FenceMask> {
    let img = load_gray(path.as_ref())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    FenceMask::new(w, h, img.into_raw().into_iter().map(|b| b >= 128).collect())
}

/// Saves a binary mask as 0/255 greyscale.
pub fn save_mask(mask: &FenceMask, path: impl AsRef<Path>) -> Result<()> {
    let raw = mask
        .as_slice()
        .iter()
        .map(|&b| if b { 255 } else { 0 })
        .collect();
    save_gray(raw, mask.width(), mask.height(), path.as_ref())
}

/// Loads a soft mask with scores `grey / 255`.
pub fn load_soft_mask(path: impl AsRef<Path>) -> Result<SoftMask> {
    let img = load_gray(path.as_ref())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    SoftMask::new(
        w,
        h,
        img.into_raw()
            .into_iter()
            .map(|b| b as f64 / 255.0)
            .collect(),
    )
}

pub fn save_soft_mask(mask: &SoftMask, path: impl AsRef<Path>) -> Result<()> {
    let raw = mask.as_slice().iter().map(|&v| quantize(v)).collect();
    save_gray(raw, mask.width(), mask.height(), path.as_ref())
}

/// `dir/prefix_NNNNN.png`.
pub fn sequence_path(dir: impl AsRef<Path>, prefix: &str, index: usize) -> PathBuf {
    dir.as_ref().join(format!("{prefix}_{index:05}.png"))
}

/// Paths of `prefix_NNNNN.png` in `dir`, checked to run from 0 without gaps.
pub fn sequence_paths(dir: impl AsRef<Path>, prefix: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut indices = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let Some(name) = name.to_str() else { continue };
        let digits = name
            .strip_prefix(prefix)
            .and_then(|r| r.strip_prefix('_'))
            .and_then(|r| r.strip_suffix(".png"));
        if let Some(d) = digits {
            if d.len() >= 5 && d.bytes().all(|b| b.is_ascii_digit()) {
                if let Ok(i) = d.parse::<usize>() {
                    indices.push(i);
                }
            }
        }
    }
    if indices.is_empty() {
        return Err(Error::MissingFrames {
            dir: dir.to_path_buf(),
            prefix: prefix.to_string(),
        });
    }
    indices.sort_unstable();
    indices.dedup();
    if let Some(missing) = indices
        .iter()
        .enumerate()
        .find(|(i, &v)| *i != v)
        .map(|(i, _)| i)
    {
        return Err(Error::NonContiguousIndices {
            dir: dir.to_path_buf(),
            missing,
        });
    }
    Ok(indices
        .into_iter()
        .map(|i| sequence_path(dir, prefix, i))
        .collect())
}

/// Loads `frame_00000.png`, `frame_00001.png`, ... from `dir`.
pub fn load_sequence(dir: impl AsRef<Path>) -> Result<Vec<Frame>> {
    sequence_paths(dir, FRAME_PREFIX)?
        .iter()
        .map(load_frame)
        .collect()
}

pub fn load_mask_sequence(dir: impl AsRef<Path>) -> Result<Vec<FenceMask>> {
    sequence_paths(dir, MASK_PREFIX)?
        .iter()
        .map(load_mask)
        .collect()
}

pub fn load_soft_mask_sequence(dir: impl AsRef<Path>) -> Result<Vec<SoftMask>> {
    sequence_paths(dir, MASK_PREFIX)?
        .iter()
        .map(load_soft_mask)
        .collect()
}

/// Writes `frames` as `dir/frame_NNNNN.png`, creating `dir` if needed.
pub fn save_sequence(frames: &[Frame], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        save_frame(f, sequence_path(dir, FRAME_PREFIX, i))?;
    }
    Ok(())
}

pub fn save_mask_sequence(masks: &[FenceMask], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (i, m) in masks.iter().enumerate() {
        save_mask(m, sequence_path(dir, MASK_PREFIX, i))?;
    }
    Ok(())
}

/// Encodes a flow field. Components are stored as `f32`.
pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * flow.u().len());
    out.extend_from_slice(&FLOW_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for (&u, &v) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&(u as f32).to_le_bytes());
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowField> {
    let word = |at: usize| -> Result<[u8; 4]> {
        bytes
            .get(at..at + 4)
            .map(|b| b.try_into().expect("four bytes"))
            .ok_or(Error::TruncatedFile {
                expected: at + 4,
                actual: bytes.len(),
            })
    };
    let magic = f32::from_le_bytes(word(0)?);
    if magic != FLOW_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let w = i32::from_le_bytes(word(4)?);
    let h = i32::from_le_bytes(word(8)?);
    if w < 0 || h < 0 {
        return Err(Error::param("flow dimensions", format!("{w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 12 + 8 * w * h;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            actual: bytes.len(),
        });
    }
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    for pair in bytes[12..expected].chunks_exact(8) {
        u.push(f32::from_le_bytes(pair[..4].try_into().expect("four bytes")) as f64);
        v.push(f32::from_le_bytes(pair[4..].try_into().expect("four bytes")) as f64);
    }
    FlowField::new(w, h, u, v)
}

pub fn write_flow(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    fs::write(path, encode_flow(flow))?;
    Ok(())
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    decode_flow(&fs::read(path)?)
}

/// Parsed `key = value` text that tracks which keys were consumed.
#[derive(Debug)]
pub struct KeyValues {
    source: String,
    entries: Vec<(usize, String, String)>,
    used: Vec<bool>,
}

impl KeyValues {
    /// `source` labels errors (usually the file path).
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(config_error(source, line, "expected `key = value`"));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(config_error(source, line, "empty key"));
            }
            if entries.iter().any(|(_, k, _)| k == key) {
                return Err(config_error(source, line, format!("duplicate key `{key}`")));
            }
            entries.push((line, key.to_string(), value.trim().to_string()));
        }
        let used = vec![false; entries.len()];
        Ok(Self {
            source: source.to_string(),
            entries,
            used,
        })
    }

    /// Parses and consumes `key` if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.take_with(key, |s| s.parse::<T>().map_err(|e| e.to_string()))
    }

    pub fn take_with<T>(
        &mut self,
        key: &str,
        parse: impl FnOnce(&str) -> std::result::Result<T, String>,
    ) -> Result<Option<T>> {
        let Some(i) = self.entries.iter().position(|(_, k, _)| k == key) else {
            return Ok(None);
        };
        self.used[i] = true;
        let (line, _, value) = &self.entries[i];
        parse(value)
            .map(Some)
            .map_err(|e| config_error(&self.source, *line, format!("`{key}`: {e}")))
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.iter().zip(&self.used).find(|(_, &u)| !u) {
            Some(((line, key, _), _)) => Err(config_error(
                &self.source,
                *line,
                format!("unknown key `{key}`"),
            )),
            None => Ok(()),
        }
    }
}

fn config_error(source: &str, line: usize, reason: impl Into<String>) -> Error {
    Error::Config {
        path: source.to_string(),
        line,
        reason: reason.into(),
    }
}

fn parse_list<const N: usize>(s: &str) -> std::result::Result<[f64; N], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(format!("expected {N} comma-separated numbers"));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse::<f64>().map_err(|e| e.to_string())?;
    }
    Ok(out)
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    parse_list::<2>(s).map(|[a, b]| (a, b))
}

/// Reads a scene description; absent keys keep their defaults.
pub fn parse_scene_spec(text: &str, source: &str) -> Result<SceneSpec> {
    let mut kv = KeyValues::parse(text, source)?;
    let mut s = SceneSpec::default();
    macro_rules! set {
        ($field:expr, $key:literal) => {
            if let Some(v) = kv.take($key)? {
                $field = v;
            }
        };
    }
    set!(s.width, "width");
    set!(s.height, "height");
    set!(s.frame_count, "frame_count");
    set!(s.background_seed, "background.seed");
    set!(s.rng_seed, "rng_seed");
    set!(s.fence.wire_width, "fence.wire_width");
    set!(s.fence.cell_size, "fence.cell_size");
    set!(s.fence.rotation, "fence.rotation");
    set!(s.fence.irregularity, "fence.irregularity");
    if let Some(k) = kv.take_with("background.kind", |v| {
        BackgroundKind::from_name(v).ok_or_else(|| format!("unknown background kind `{v}`"))
    })? {
        s.background = k;
    }
    if let Some(p) = kv.take_with("fence.pattern", |v| {
        FencePattern::from_name(v).ok_or_else(|| format!("unknown fence pattern `{v}`"))
    })? {
        s.fence.pattern = p;
    }
    if let Some(m) = kv.take_with("background_motion", parse_pair)? {
        s.background_motion = m;
    }
    if let Some(m) = kv.take_with("fence_motion", parse_pair)? {
        s.fence_motion = m;
    }
    if let Some(c) = kv.take_with("fence.color", parse_list::<3>)? {
        s.fence.color = c;
    }
    kv.finish()?;
    Ok(s)
}

/// Writes every field of `spec`, readable by [`parse_scene_spec`].
pub fn scene_spec_to_string(spec: &SceneSpec) -> String {
    let FenceSpec {
        pattern,
        wire_width,
        cell_size,
        rotation,
        color,
        irregularity,
    } = spec.fence;
    format!(
        "width = {}\nheight = {}\nframe_count = {}\nbackground.kind = {}\nbackground.seed = {}\n\
         background_motion = {:?}, {:?}\nfence_motion = {:?}, {:?}\nfence.pattern = {}\n\
         fence.wire_width = {wire_width:?}\nfence.cell_size = {cell_size:?}\nfence.rotation = {rotation:?}\n\
         fence.color = {:?}, {:?}, {:?}\nfence.irregularity = {irregularity:?}\nrng_seed = {}\n",
        spec.width,
        spec.height,
        spec.frame_count,
        spec.background.name(),
        spec.background_seed,
        spec.background_motion.0,
        spec.background_motion.1,
        spec.fence_motion.0,
        spec.fence_motion.1,
        pattern.name(),
        color[0],
        color[1],
        color[2],
        spec.rng_seed,
    )
}

pub fn load_scene_spec(path: impl AsRef<Path>) -> Result<SceneSpec> {
    let path = path.as_ref();
    parse_scene_spec(&fs::read_to_string(path)?, &path.display().to_string())
}

/// Parameters of the whole pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PipelineConfig {
    pub refine: RefineParams,
    pub flow: FlowParams,
    pub fusion: FusionParams,
}

/// Reads a pipeline configuration; absent keys keep their defaults.
pub fn parse_pipeline_config(text: &str, source: &str) -> Result<PipelineConfig> {
    let mut kv = KeyValues::parse(text, source)?;
    let mut c = PipelineConfig::default();
    macro_rules! set {
        ($field:expr, $key:literal) => {
            if let Some(v) = kv.take($key)? {
                $field = v;
            }
        };
    }
    set!(c.refine.m, "refine.m");
    set!(c.refine.mu, "refine.mu");
    set!(c.refine.close_radius, "refine.close_radius");
    set!(c.refine.close_iterations, "refine.close_iterations");
    set!(c.flow.lambda, "flow.lambda");
    set!(c.flow.pyramid_scale, "flow.pyramid_scale");
    set!(c.flow.min_dimension, "flow.min_dimension");
    set!(c.flow.outer_warps_per_level, "flow.outer_warps_per_level");
    set!(c.flow.irls_iterations, "flow.irls_iterations");
    set!(c.flow.sor_iterations, "flow.sor_iterations");
    set!(c.flow.sor_omega, "flow.sor_omega");
    set!(c.flow.irls_epsilon, "flow.irls_epsilon");
    set!(c.flow.median_filter, "flow.median_filter");
    set!(c.fusion.n, "fusion.n");
    set!(c.fusion.lambda_fusion, "fusion.lambda");
    set!(c.fusion.prox_max_passes, "fusion.prox_max_passes");
    set!(c.fusion.prox_tolerance, "fusion.prox_tolerance");
    set!(c.fusion.renormalize, "fusion.renormalize");
    set!(c.fusion.inpaint_radius, "fusion.inpaint_radius");
    kv.finish()?;
    c.refine.validate()?;
    c.flow.validate()?;
    c.fusion.validate()?;
    Ok(c)
}

pub fn load_pipeline_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    parse_pipeline_config(&fs::read_to_string(path)?, &path.display().to_string())
}
