//! Deterministic synthetic fenced sequences with exact ground truth.
//!
//! The background is a procedural texture evaluated at continuous
//! coordinates, so translating it by a sub-pixel amount needs no resampling.
//! Frame `t` shows the texture at `x − t·v_bg` and the fence at
//! `x − t·v_fence`, which makes the true flow from frame `o` to frame `k`
//! exactly `(k − o)·v_bg` on background pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{FenceMask, Frame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackgroundKind {
    /// Band-limited sum of random plane waves per channel.
    #[default]
    SmoothNoise,
    /// Slow ramps along x, y and the diagonal.
    Gradient,
    /// Two-colour checkerboard with 8 px squares.
    Checker,
}

impl BackgroundKind {
    pub fn name(self) -> &'static str {
        match self {
            BackgroundKind::SmoothNoise => "smooth_noise",
            BackgroundKind::Gradient => "gradient",
            BackgroundKind::Checker => "checker",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "smooth_noise" => Some(BackgroundKind::SmoothNoise),
            "gradient" => Some(BackgroundKind::Gradient),
            "checker" => Some(BackgroundKind::Checker),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FencePattern {
    /// Horizontal and vertical wires.
    #[default]
    Rectangular,
    /// Two families of wires at ±45°.
    Diamond,
}

impl FencePattern {
    pub fn name(self) -> &'static str {
        match self {
            FencePattern::Rectangular => "rectangular",
            FencePattern::Diamond => "diamond",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "rectangular" => Some(FencePattern::Rectangular),
            "diamond" => Some(FencePattern::Diamond),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FenceSpec {
    pub pattern: FencePattern,
    pub wire_width: f64,
    /// Wire spacing, measured perpendicular to the wires.
    pub cell_size: f64,
    /// Extra rotation of the lattice in degrees.
    pub rotation: f64,
    pub color: [f64; 3],
    /// Maximum offset of each wire from its regular position, in pixels.
    pub irregularity: f64,
}

impl Default for FenceSpec {
    fn default() -> Self {
        Self {
            pattern: FencePattern::Rectangular,
            wire_width: 2.0,
            cell_size: 12.0,
            rotation: 0.0,
            color: [0.8, 0.8, 0.8],
            irregularity: 0.0,
        }
    }
}

impl FenceSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.wire_width,
            self.cell_size,
            self.rotation,
            self.irregularity,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidSpec("fence parameters must be finite".into()));
        }
        if self.wire_width < 1.0 {
            return Err(Error::InvalidSpec(format!(
                "wire_width {} must be at least 1",
                self.wire_width
            )));
        }
        if self.cell_size <= 2.0 * self.wire_width {
            return Err(Error::InvalidSpec(format!(
                "cell_size {} must exceed twice wire_width {}",
                self.cell_size, self.wire_width
            )));
        }
        if self.irregularity < 0.0 {
            return Err(Error::InvalidSpec("irregularity must be >= 0".into()));
        }
        if !self.color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::InvalidSpec("fence colour must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub background: BackgroundKind,
    pub background_seed: u64,
    /// Background displacement per frame, `(dx, dy)` in pixels.
    pub background_motion: (f64, f64),
    pub fence_motion: (f64, f64),
    pub fence: FenceSpec,
    /// Seeds the wire jitter.
    pub rng_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 96,
            height: 64,
            frame_count: 7,
            background: BackgroundKind::SmoothNoise,
            background_seed: 1,
            background_motion: (2.0, 1.0),
            fence_motion: (0.0, 0.0),
            fence: FenceSpec::default(),
            rng_seed: 7,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidSpec(
                "width and height must be positive".into(),
            ));
        }
        if self.frame_count == 0 {
            return Err(Error::InvalidSpec("frame_count must be at least 1".into()));
        }
        let (a, b) = self.background_motion;
        let (c, d) = self.fence_motion;
        if ![a, b, c, d].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidSpec("motions must be finite".into()));
        }
        self.fence.validate()
    }

    /// True flow from frame `target` to frame `neighbor` on background pixels.
    pub fn background_flow(&self, target: usize, neighbor: usize) -> (f64, f64) {
        let dt = neighbor as f64 - target as f64;
        (dt * self.background_motion.0, dt * self.background_motion.1)
    }
}

/// Output of [`generate_scene`]; the three lists are index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub fenced_frames: Vec<Frame>,
    pub clean_frames: Vec<Frame>,
    pub masks: Vec<FenceMask>,
}

/// Rasterises the fence lattice at its rest position.
pub fn generate_fence_mask(
    spec: &FenceSpec,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<FenceMask> {
    spec.validate()?;
    let lattice = Lattice::new(spec, seed);
    Ok(FenceMask::from_fn(width, height, |x, y| {
        lattice.contains(x as f64, y as f64)
    }))
}

/// Renders every frame of the scene.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let texture = Texture::new(spec.background, spec.background_seed);
    let lattice = Lattice::new(&spec.fence, spec.rng_seed);
    let (w, h) = (spec.width, spec.height);
    let mut scene = Scene {
        fenced_frames: Vec::with_capacity(spec.frame_count),
        clean_frames: Vec::with_capacity(spec.frame_count),
        masks: Vec::with_capacity(spec.frame_count),
    };
    for t in 0..spec.frame_count {
        let t = t as f64;
        let (bx, by) = (t * spec.background_motion.0, t * spec.background_motion.1);
        let (fx, fy) = (t * spec.fence_motion.0, t * spec.fence_motion.1);
        let clean = Frame::from_fn(w, h, |x, y| texture.sample(x as f64 - bx, y as f64 - by))?;
        let mask = FenceMask::from_fn(w, h, |x, y| lattice.contains(x as f64 - fx, y as f64 - fy));
        let fenced = Frame::from_fn(w, h, |x, y| {
            if mask.get(x, y) {
                spec.fence.color
            } else {
                clean.pixel(x, y)
            }
        })?;
        scene.fenced_frames.push(fenced);
        scene.clean_frames.push(clean);
        scene.masks.push(mask);
    }
    Ok(scene)
}

struct Lattice {
    spec: FenceSpec,
    cos: f64,
    sin: f64,
    seed: u64,
}

impl Lattice {
    fn new(spec: &FenceSpec, seed: u64) -> Self {
        let base = match spec.pattern {
            FencePattern::Rectangular => 0.0,
            FencePattern::Diamond => 45.0,
        };
        let angle = (base + spec.rotation).to_radians();
        Self {
            spec: *spec,
            cos: angle.cos(),
            sin: angle.sin(),
            seed,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let a = x * self.cos + y * self.sin;
        let b = -x * self.sin + y * self.cos;
        self.on_wire(a, 0) || self.on_wire(b, 1)
    }

    /// Whether coordinate `c` along `axis` lies on one of that family's wires.
    fn on_wire(&self, c: f64, axis: u64) -> bool {
        let cell = self.spec.cell_size;
        let width = self.spec.wire_width;
        if self.spec.irregularity == 0.0 {
            return c.rem_euclid(cell) < width;
        }
        // With jitter below a cell, only the wires of the neighbouring cells
        // can reach `c`.
        let reach = (self.spec.irregularity / cell).ceil() as i64 + 1;
        let k = (c / cell).floor() as i64;
        (k - reach..=k + reach).any(|i| {
            let start = i as f64 * cell + self.jitter(axis, i);
            c >= start && c < start + width
        })
    }

    fn jitter(&self, axis: u64, line: i64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(axis << 32 ^ line as u32 as u64);
        self.spec.irregularity * rng.random_range(-1.0..=1.0)
    }
}

struct Wave {
    fx: f64,
    fy: f64,
    amplitude: f64,
    phase: [f64; 3],
}

enum Texture {
    Noise(Vec<Wave>),
    Gradient,
    Checker,
}

impl Texture {
    fn new(kind: BackgroundKind, seed: u64) -> Self {
        match kind {
            BackgroundKind::SmoothNoise => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let count = 12;
                let waves = (0..count)
                    .map(|_| {
                        let period = rng.random_range(6.0..40.0);
                        let theta = rng.random_range(0.0..std::f64::consts::TAU);
                        let f = std::f64::consts::TAU / period;
                        Wave {
                            fx: f * theta.cos(),
                            fy: f * theta.sin(),
                            amplitude: 0.4 / count as f64 * rng.random_range(0.5..1.5),
                            phase: std::array::from_fn(|_| {
                                rng.random_range(0.0..std::f64::consts::TAU)
                            }),
                        }
                    })
                    .collect();
                Texture::Noise(waves)
            }
            BackgroundKind::Gradient => Texture::Gradient,
            BackgroundKind::Checker => Texture::Checker,
        }
    }

    fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        match self {
            Texture::Noise(waves) => {
                let mut out = [0.5; 3];
                for w in waves {
                    let arg = w.fx * x + w.fy * y;
                    for (c, o) in out.iter_mut().enumerate() {
                        *o += w.amplitude * (arg + w.phase[c]).sin();
                    }
                }
                out.map(|v| v.clamp(0.0, 1.0))
            }
            Texture::Gradient => {
                let r = 0.5 + 0.4 * (x / 256.0).sin();
                let g = 0.5 + 0.4 * (y / 256.0).sin();
                let b = 0.5 + 0.4 * ((x + y) / 362.0).sin();
                [r, g, b]
            }
            Texture::Checker => {
                let parity = ((x / 8.0).floor() as i64 + (y / 8.0).floor() as i64).rem_euclid(2);
                if parity == 0 {
                    [0.2, 0.3, 0.25]
                } else {
                    [0.7, 0.6, 0.65]
                }
            }
        }
    }
}
