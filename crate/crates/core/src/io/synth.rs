use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{invalid, Error, Result};
use crate::geometry::{relative_to_absolute, Pose6DoF, Trajectory, TransformSE3};
use crate::model::ModelConfig;
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    #[default]
    #[serde(rename = "line")]
    Line,
    #[serde(rename = "circle")]
    Circle,
    #[serde(rename = "figure-eight")]
    FigureEight,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Line, Shape::Circle, Shape::FigureEight];

    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Line => "line",
            Shape::Circle => "circle",
            Shape::FigureEight => "figure-eight",
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown shape `{s}` (expected line, circle or figure-eight)")))
    }
}

/// Planar test trajectory in the x-z plane, driving forward along +z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub shape: Shape,
    pub n_frames: usize,
    /// Arc length per frame (m).
    pub step: f64,
    /// Inverse turning radius (1/m); ignored for lines.
    pub curvature: f64,
    /// Std of the Gaussian added to each relative-motion component of the
    /// perturbed copy (rad for angles, m for translations).
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            shape: Shape::Line,
            n_frames: 100,
            step: 1.0,
            curvature: 0.05,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(invalid(format!(
                "synthetic n_frames must be ≥ 2, got {}",
                self.n_frames
            )));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(invalid(format!(
                "synthetic step must be a positive length, got {}",
                self.step
            )));
        }
        if !self.curvature.is_finite() {
            return Err(invalid("synthetic curvature must be finite"));
        }
        if self.shape != Shape::Line && self.curvature == 0.0 {
            return Err(invalid(format!("{} needs a non-zero curvature", self.shape)));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(invalid("noise_std must be ≥ 0"));
        }
        Ok(())
    }
}

/// Exact relative motions of the noiseless trajectory. An arc of angle
/// `θ = κ · step` turns by `θ` about y and moves along the chord
/// `Ry(θ/2) · (0, 0, 2 sin(θ/2) / κ)`.
pub fn synthetic_motions(spec: &SyntheticSpec) -> Result<Vec<Pose6DoF>> {
    spec.validate()?;
    let n = spec.n_frames - 1;
    let arc = |theta: f64| -> Result<Pose6DoF> {
        let chord = 2.0 * (theta / 2.0).sin() / spec.curvature;
        let half = theta / 2.0;
        Pose6DoF::new(
            Vector3::new(0.0, theta, 0.0),
            Vector3::new(chord * half.sin(), 0.0, chord * half.cos()),
        )
    };
    let theta = spec.curvature * spec.step;
    (0..n)
        .map(|k| match spec.shape {
            Shape::Line => Pose6DoF::new(Vector3::zeros(), Vector3::new(0.0, 0.0, spec.step)),
            Shape::Circle => arc(theta),
            Shape::FigureEight => arc(if k < n / 2 { theta } else { -theta }),
        })
        .collect()
}

/// `(gt, noisy)`, both starting at the identity. The noisy copy perturbs
/// every relative motion and re-integrates, so its error accumulates.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Trajectory, Trajectory)> {
    let motions = synthetic_motions(spec)?;
    let gt = relative_to_absolute(&motions, &TransformSE3::identity());
    if spec.noise_std == 0.0 {
        return Ok((gt.clone(), gt));
    }
    let mut rng = rng::stream(spec.seed, Stream::MotionNoise);
    let normal = Normal::new(0.0, spec.noise_std).map_err(|e| invalid(e.to_string()))?;
    let noisy_motions = motions
        .iter()
        .map(|m| {
            let mut v = m.to_array();
            for x in v.iter_mut() {
                *x += normal.sample(&mut rng);
            }
            Pose6DoF::from_array(v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((gt, relative_to_absolute(&noisy_motions, &TransformSE3::identity())))
}

/// Top-down imaging of a textured ground plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub pixels_per_meter: f64,
    /// Side of the finest texture cell (m).
    pub cell_size: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            pixels_per_meter: 16.0,
            cell_size: 0.25,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pixels_per_meter > 0.0) || !(self.cell_size > 0.0) {
            return Err(invalid("pixels_per_meter and cell_size must be positive"));
        }
        Ok(())
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn cell_value(seed: u64, level: u64, ix: i64, iz: i64, channel: usize) -> f64 {
    let h = mix(seed ^ mix(level ^ mix((ix as u64) ^ mix((iz as u64) ^ mix(channel as u64)))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn texture(seed: u64, cell: f64, x: f64, z: f64, channel: usize) -> f64 {
    let fine = cell_value(seed, 0, (x / cell).floor() as i64, (z / cell).floor() as i64, channel);
    let coarse = cell_value(
        seed,
        1,
        (x / (4.0 * cell)).floor() as i64,
        (z / (4.0 * cell)).floor() as i64,
        channel,
    );
    0.5 * fine + 0.5 * coarse
}

/// Renders one `(C, H, W)` frame in `[0, 1]` seen from `pose`. Pixel `(u, v)`
/// views the camera-frame ground point `((u − W/2) / ppm, 0, (H/2 − v) / ppm)`.
pub fn render_frame(
    pose: &TransformSE3,
    cfg: &ModelConfig,
    render: &RenderConfig,
    texture_seed: u64,
) -> Result<Tensor<f64>> {
    render.validate()?;
    let (c, h, w) = (cfg.channels, cfg.height, cfg.width);
    let ppm = render.pixels_per_meter;
    let mut data = vec![0.0; c * h * w];
    for v in 0..h {
        for u in 0..w {
            let local = Vector3::new(
                (u as f64 - (w / 2) as f64) / ppm,
                0.0,
                ((h / 2) as f64 - v as f64) / ppm,
            );
            let p = pose.transform_point(&local);
            for ch in 0..c {
                data[(ch * h + v) * w + u] = texture(texture_seed, render.cell_size, p.x, p.z, ch);
            }
        }
    }
    Tensor::new(vec![c, h, w], data)
}

pub fn render_frames(
    traj: &Trajectory,
    cfg: &ModelConfig,
    render: &RenderConfig,
    texture_seed: u64,
) -> Result<Vec<Tensor<f64>>> {
    traj.poses()
        .iter()
        .map(|p| render_frame(p, cfg, render, texture_seed))
        .collect()
}

/// Frames along the noiseless trajectory of `spec`, textured from its seed.
pub fn generate_synthetic_frames(
    spec: &SyntheticSpec,
    cfg: &ModelConfig,
    render: &RenderConfig,
) -> Result<Vec<Tensor<f64>>> {
    let (gt, _) = generate_synthetic(spec)?;
    render_frames(&gt, cfg, render, texture_seed(spec.seed))
}

/// Texture seed drawn from the texture stream of `seed`.
pub fn texture_seed(seed: u64) -> u64 {
    rng::stream(seed, Stream::Texture).next_u64()
}
