//! Synthetic particle images with analytic ground truth.
//!
//! Particles are Gaussian spots `peak * exp(-8 r^2 / d^2)` (`d` is the
//! e^-2 diameter). The second frame is rendered from particles moved by the
//! flow evaluated at their own position, so truth is exact at particles.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{axis, FieldGrid};
use crate::image::Image;

pub const DEFAULT_DENSITY: f64 = 0.03;
pub const DEFAULT_DIAMETER: f64 = 3.0;
pub const DEFAULT_PEAK: f64 = 1.0;

/// Particle diameter of the single-particle preset. Large enough for the
/// spot to overlap its displaced copy.
pub const SINGLE_PARTICLE_DIAMETER: f64 = 30.0;

/// Displacement field `d(x, y)` in pixels per frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticFlow {
    Zero,
    Uniform { u: f64, v: f64 },
    /// Exact rotation by `angle` radians per frame about `(cx, cy)`.
    RigidRotation { cx: f64, cy: f64, angle: f64 },
    /// `dx = rate * (y - y_ref)`.
    Shear { rate: f64, y_ref: f64 },
    /// Gaussian jet `dx = u_max * exp(-((y - center_y) / half_width)^2)`.
    JetShear { u_max: f64, center_y: f64, half_width: f64 },
    /// Uniform shift meant for the single-particle preset.
    SingleParticle { dx: f64, dy: f64 },
}

impl AnalyticFlow {
    pub fn displacement(&self, x: f64, y: f64) -> [f64; 2] {
        match *self {
            AnalyticFlow::Zero => [0.0, 0.0],
            AnalyticFlow::Uniform { u, v } => [u, v],
            AnalyticFlow::SingleParticle { dx, dy } => [dx, dy],
            AnalyticFlow::RigidRotation { cx, cy, angle } => {
                let (s, c) = angle.sin_cos();
                let (rx, ry) = (x - cx, y - cy);
                [c * rx - s * ry - rx, s * rx + c * ry - ry]
            }
            AnalyticFlow::Shear { rate, y_ref } => [rate * (y - y_ref), 0.0],
            AnalyticFlow::JetShear {
                u_max,
                center_y,
                half_width,
            } => {
                let t = (y - center_y) / half_width;
                [u_max * (-t * t).exp(), 0.0]
            }
        }
    }

    /// Truth sampled on the pixel centers of a `width x height` image.
    pub fn grid(&self, width: usize, height: usize) -> FieldGrid {
        FieldGrid::from_fn(axis(0.0, 1.0, width), axis(0.0, 1.0, height), |x, y| {
            self.displacement(x, y)
        })
    }
}

impl fmt::Display for AnalyticFlow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            AnalyticFlow::Zero => write!(f, "zero"),
            AnalyticFlow::Uniform { u, v } => write!(f, "uniform:{u},{v}"),
            AnalyticFlow::SingleParticle { dx, dy } => write!(f, "single-particle:{dx},{dy}"),
            AnalyticFlow::RigidRotation { cx, cy, angle } => write!(f, "rotation:{cx},{cy},{angle}"),
            AnalyticFlow::Shear { rate, y_ref } => write!(f, "shear:{rate},{y_ref}"),
            AnalyticFlow::JetShear {
                u_max,
                center_y,
                half_width,
            } => write!(f, "jet:{u_max},{center_y},{half_width}"),
        }
    }
}

/// Parses `kind[:a,b,...]`, e.g. `uniform:3.7,-2.2` or `rotation:64,64,0.02`.
impl FromStr for AnalyticFlow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let nums: Vec<f64> = if args.trim().is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| {
                    a.trim()
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("bad number {a:?} in flow {s:?}")))
                })
                .collect::<Result<_>>()?
        };
        let want = |n: usize| -> Result<()> {
            if nums.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "flow {kind:?} takes {n} parameters, got {}",
                    nums.len()
                )))
            }
        };
        let flow = match kind.trim() {
            "zero" => {
                want(0)?;
                AnalyticFlow::Zero
            }
            "uniform" => {
                want(2)?;
                AnalyticFlow::Uniform { u: nums[0], v: nums[1] }
            }
            "single-particle" | "single_particle" => {
                want(2)?;
                AnalyticFlow::SingleParticle { dx: nums[0], dy: nums[1] }
            }
            "rotation" | "rigid_rotation" => {
                want(3)?;
                AnalyticFlow::RigidRotation {
                    cx: nums[0],
                    cy: nums[1],
                    angle: nums[2],
                }
            }
            "shear" => {
                want(2)?;
                AnalyticFlow::Shear { rate: nums[0], y_ref: nums[1] }
            }
            "jet" | "jet_shear" => {
                want(3)?;
                AnalyticFlow::JetShear {
                    u_max: nums[0],
                    center_y: nums[1],
                    half_width: nums[2],
                }
            }
            other => return Err(Error::InvalidConfig(format!("unknown flow kind {other:?}"))),
        };
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("non-finite parameter in flow {s:?}")));
        }
        Ok(flow)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub positions: Vec<[f64; 2]>,
    /// e^-2 diameter in pixels.
    pub diameter: f64,
    pub peak: f64,
}

impl ParticleSet {
    pub fn new(positions: Vec<[f64; 2]>, diameter: f64, peak: f64) -> Result<Self> {
        if !(diameter.is_finite() && diameter > 0.0) {
            return Err(Error::InvalidConfig(format!("particle diameter must be positive, got {diameter}")));
        }
        if positions.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidConfig("particle positions must be finite".into()));
        }
        Ok(ParticleSet {
            positions,
            diameter,
            peak,
        })
    }

    /// `round(density * w * h)` particles uniformly spread over the image,
    /// including a margin of one diameter outside it so that particles can
    /// enter the frame.
    pub fn random(width: usize, height: usize, density: f64, diameter: f64, peak: f64, seed: u64) -> Result<Self> {
        if !(density.is_finite() && density >= 0.0) {
            return Err(Error::InvalidConfig(format!("density must be non-negative, got {density}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let margin = diameter;
        let (w, h) = (width as f64 + 2.0 * margin, height as f64 + 2.0 * margin);
        let count = (density * w * h).round() as usize;
        let positions = (0..count)
            .map(|_| [rng.gen::<f64>() * w - margin, rng.gen::<f64>() * h - margin])
            .collect();
        Self::new(positions, diameter, peak)
    }

    /// One particle at the image center.
    pub fn centered(width: usize, height: usize, diameter: f64, peak: f64) -> Result<Self> {
        Self::new(vec![[width as f64 / 2.0, height as f64 / 2.0]], diameter, peak)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Each particle moved by the flow at its own position.
    pub fn advected(&self, flow: &AnalyticFlow) -> ParticleSet {
        ParticleSet {
            positions: self
                .positions
                .iter()
                .map(|p| {
                    let d = flow.displacement(p[0], p[1]);
                    [p[0] + d[0], p[1] + d[1]]
                })
                .collect(),
            diameter: self.diameter,
            peak: self.peak,
        }
    }
}

/// Unclamped sum of particle spots, row-major.
pub fn render_raw(particles: &ParticleSet, width: usize, height: usize) -> Vec<f64> {
    let mut acc = vec![0.0; width * height];
    let d2 = particles.diameter * particles.diameter;
    // beyond this radius a spot is below 1e-12 of its peak
    let reach = particles.diameter * (12.0 * 10f64.ln() / 8.0).sqrt();
    for p in &particles.positions {
        let x0 = ((p[0] - reach).ceil().max(0.0)) as usize;
        let y0 = ((p[1] - reach).ceil().max(0.0)) as usize;
        let x1 = (p[0] + reach).floor().min(width as f64 - 1.0);
        let y1 = (p[1] + reach).floor().min(height as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for y in y0..=y1 as usize {
            let dy = y as f64 - p[1];
            for x in x0..=x1 as usize {
                let dx = x as f64 - p[0];
                acc[y * width + x] += particles.peak * (-8.0 * (dx * dx + dy * dy) / d2).exp();
            }
        }
    }
    acc
}

/// Renders the particles, clamping the summed intensity into `[0, 1]`.
pub fn render(particles: &ParticleSet, width: usize, height: usize) -> Image {
    let raw = render_raw(particles, width, height);
    Image::from_fn(width, height, |x, y| raw[y * width + x] as f32)
}

/// Optional additive Gaussian camera noise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub std: f64,
    pub seed: u64,
}

impl Noise {
    pub const NONE: Noise = Noise { std: 0.0, seed: 0 };

    fn apply(&self, img: Image, stream: u64) -> Image {
        if self.std <= 0.0 {
            return img;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let (w, h) = img.dims();
        Image::from_fn(w, h, |x, y| {
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = rng.gen();
            let n = (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos();
            (img.get(x, y) as f64 + self.std * n) as f32
        })
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub first: Image,
    pub second: Image,
    pub flow: AnalyticFlow,
    /// Particle positions in the first frame.
    pub particles: ParticleSet,
}

impl SyntheticPair {
    pub fn truth(&self, x: f64, y: f64) -> [f64; 2] {
        self.flow.displacement(x, y)
    }

    pub fn truth_grid(&self) -> FieldGrid {
        self.flow.grid(self.first.width(), self.first.height())
    }

    /// Particles inside the first frame with their exact displacements.
    pub fn particle_truth(&self) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
        inside_with_truth(&self.particles.positions, &self.flow, self.first.width(), self.first.height())
    }
}

fn inside_with_truth(
    positions: &[[f64; 2]],
    flow: &AnalyticFlow,
    width: usize,
    height: usize,
) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    positions
        .iter()
        .filter(|p| p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= (width - 1) as f64 && p[1] <= (height - 1) as f64)
        .map(|p| (*p, flow.displacement(p[0], p[1])))
        .unzip()
}

/// Renders the particles before and after one step of `flow`.
pub fn generate_pair(
    flow: &AnalyticFlow,
    particles: &ParticleSet,
    width: usize,
    height: usize,
    noise: Noise,
) -> SyntheticPair {
    let first = noise.apply(render(particles, width, height), 0);
    let second = noise.apply(render(&particles.advected(flow), width, height), 1);
    SyntheticPair {
        first,
        second,
        flow: *flow,
        particles: particles.clone(),
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub frames: Vec<Image>,
    pub flow: AnalyticFlow,
    /// Particle positions at every frame.
    pub positions: Vec<Vec<[f64; 2]>>,
}

impl SyntheticSequence {
    /// Displacement of every particle from frame `t` to `t + 1`.
    pub fn displacements(&self, t: usize) -> Vec<[f64; 2]> {
        self.positions[t]
            .iter()
            .zip(&self.positions[t + 1])
            .map(|(a, b)| [b[0] - a[0], b[1] - a[1]])
            .collect()
    }

    /// Particles inside frame `t` and their displacement to frame `t + 1`.
    pub fn pair_points(&self, t: usize) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
        let (w, h) = self.frames[t].dims();
        inside_with_truth(&self.positions[t], &self.flow, w, h)
    }
}

/// Advects the particles frame by frame and renders every frame.
pub fn generate_sequence(
    flow: &AnalyticFlow,
    particles: &ParticleSet,
    width: usize,
    height: usize,
    n_frames: usize,
    noise: Noise,
) -> Result<SyntheticSequence> {
    if n_frames < 2 {
        return Err(Error::NotEnoughData(format!(
            "a sequence needs at least 2 frames, got {n_frames}"
        )));
    }
    let mut current = particles.clone();
    let mut frames = Vec::with_capacity(n_frames);
    let mut positions = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        frames.push(noise.apply(render(&current, width, height), t as u64));
        positions.push(current.positions.clone());
        current = current.advected(flow);
    }
    Ok(SyntheticSequence {
        frames,
        flow: *flow,
        positions,
    })
}

/// The single-particle convergence case: one large particle at the center
/// of a 256x256 image displaced by (10, 10).
pub fn single_particle_case() -> SyntheticPair {
    let flow = AnalyticFlow::SingleParticle { dx: 10.0, dy: 10.0 };
    let particles = ParticleSet::centered(256, 256, SINGLE_PARTICLE_DIAMETER, DEFAULT_PEAK).unwrap();
    generate_pair(&flow, &particles, 256, 256, Noise::NONE)
}
