//! Ray-cast LiDAR simulator over a ground plane and axis-aligned boxes.
//!
//! Rays leave the sensor at the pixel centers of a `rows × cols` spherical
//! grid, so a scan taken with `rows × cols` equal to the range-image size
//! fills every pixel it hits with exactly one point.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{Frame, MosLabel, MosLabels, PointCloud, Pose, ScanSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub rows: usize,
    pub cols: usize,
    pub fov_up_deg: f64,
    pub fov_down_deg: f64,
    pub max_range: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 256,
            fov_up_deg: 3.0,
            fov_down_deg: -25.0,
            max_range: 80.0,
        }
    }
}

impl SensorConfig {
    /// Unit direction of the ray through the center of grid cell `(row, col)`.
    pub fn ray_direction(&self, row: usize, col: usize) -> [f64; 3] {
        let up = self.fov_up_deg.to_radians();
        let fov = up + self.fov_down_deg.abs().to_radians();
        let v = (row as f64 + 0.5) / self.rows as f64;
        let u = (col as f64 + 0.5) / self.cols as f64;
        let elevation = (1.0 - v) * fov - up;
        let azimuth = std::f64::consts::PI * (1.0 - 2.0 * u);
        let (se, ce) = elevation.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        [ce * ca, ce * sa, se]
    }
}

/// Sensor motion: pose at frame `t` is `yaw0 + t·yaw_rate` about z and
/// `start + t·velocity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub yaw0: f64,
    #[serde(default)]
    pub yaw_rate: f64,
}

impl Default for Trajectory {
    fn default() -> Self {
        Self {
            start: [0.0, 0.0, 0.4],
            velocity: [0.0; 3],
            yaw0: 0.0,
            yaw_rate: 0.0,
        }
    }
}

impl Trajectory {
    pub fn pose(&self, t: usize) -> Pose {
        let t = t as f64;
        Pose::from_yaw_translation(
            self.yaw0 + t * self.yaw_rate,
            [
                self.start[0] + t * self.velocity[0],
                self.start[1] + t * self.velocity[1],
                self.start[2] + t * self.velocity[2],
            ],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    /// Center at frame 0, world frame.
    pub center: [f64; 3],
    /// Full extents along x, y, z.
    pub size: [f64; 3],
    /// Displacement per frame.
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default = "default_intensity")]
    pub intensity: f32,
}

fn default_intensity() -> f32 {
    0.5
}

impl BoxSpec {
    pub fn is_moving(&self) -> bool {
        self.velocity.iter().any(|v| *v != 0.0)
    }

    pub fn bounds(&self, t: usize) -> ([f64; 3], [f64; 3]) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for k in 0..3 {
            let c = self.center[k] + t as f64 * self.velocity[k];
            lo[k] = c - 0.5 * self.size[k];
            hi[k] = c + 0.5 * self.size[k];
        }
        (lo, hi)
    }
}

/// Scene and sensor description; serialized as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    #[serde(default = "default_sequence_id")]
    pub sequence_id: String,
    pub frames: usize,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub trajectory: Trajectory,
    /// Height of the ground plane `z = ground_z`; `None` disables it.
    #[serde(default)]
    pub ground_z: Option<f64>,
    #[serde(default = "default_ground_intensity")]
    pub ground_intensity: f32,
    #[serde(default)]
    pub statics: Vec<BoxSpec>,
    #[serde(default)]
    pub movers: Vec<BoxSpec>,
}

fn default_sequence_id() -> String {
    "synthetic".into()
}

fn default_ground_intensity() -> f32 {
    0.2
}

impl SyntheticConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("synthetic config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("synthetic config serializes")
    }

    /// A street-like scene: ground, two walls, a parked box and one car
    /// driving toward the sensor.
    pub fn street(frames: usize, rows: usize, cols: usize) -> Self {
        Self {
            sequence_id: "street".into(),
            frames,
            sensor: SensorConfig {
                rows,
                cols,
                ..SensorConfig::default()
            },
            trajectory: Trajectory {
                start: [0.0, 0.0, 0.4],
                velocity: [0.2, 0.0, 0.0],
                ..Trajectory::default()
            },
            ground_z: Some(0.0),
            ground_intensity: 0.2,
            statics: vec![
                BoxSpec {
                    center: [10.0, 9.0, 2.0],
                    size: [60.0, 1.0, 4.0],
                    velocity: [0.0; 3],
                    intensity: 0.6,
                },
                BoxSpec {
                    center: [10.0, -9.0, 2.0],
                    size: [60.0, 1.0, 4.0],
                    velocity: [0.0; 3],
                    intensity: 0.6,
                },
                BoxSpec {
                    center: [-6.0, 4.0, 0.8],
                    size: [4.0, 2.0, 1.6],
                    velocity: [0.0; 3],
                    intensity: 0.4,
                },
            ],
            movers: vec![BoxSpec {
                center: [16.0, -2.5, 0.8],
                size: [4.0, 2.0, 1.6],
                velocity: [-0.5, 0.0, 0.0],
                intensity: 0.8,
            }],
        }
    }
}

/// What a ray hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Ground,
    Static(usize),
    Mover(usize),
}

/// Exact (f64) ray-cast return in the sensor frame.
#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub point: [f64; 3],
    pub range: f64,
    pub surface: Surface,
    pub intensity: f32,
}

fn ray_box(origin: [f64; 3], dir: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for k in 0..3 {
        if dir[k] == 0.0 {
            if origin[k] < lo[k] || origin[k] > hi[k] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[k];
        let (mut a, mut b) = ((lo[k] - origin[k]) * inv, (hi[k] - origin[k]) * inv);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t_near = t_near.max(a);
        t_far = t_far.min(b);
        if t_near > t_far {
            return None;
        }
    }
    if t_near > 1e-9 {
        Some(t_near)
    } else {
        None
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Config(format!("need at least 2 frames, got {}", self.frames)));
        }
        if self.sensor.rows == 0 || self.sensor.cols == 0 {
            return Err(Error::Config("sensor needs at least one ray row and column".into()));
        }
        if self.ground_z.is_none() && self.statics.is_empty() && self.movers.is_empty() {
            return Err(Error::DegenerateScene("no ground plane and no boxes".into()));
        }
        Ok(())
    }

    /// Casts every ray of frame `t`.
    pub fn cast_frame(&self, t: usize) -> Vec<Hit> {
        let pose = self.trajectory.pose(t);
        let origin = [pose.translation[0], pose.translation[1], pose.translation[2]];
        let statics: Vec<_> = self.statics.iter().map(|b| b.bounds(t)).collect();
        let movers: Vec<_> = self.movers.iter().map(|b| b.bounds(t)).collect();
        let mut hits = Vec::with_capacity(self.sensor.rows * self.sensor.cols);
        for row in 0..self.sensor.rows {
            for col in 0..self.sensor.cols {
                let d = self.sensor.ray_direction(row, col);
                let w = pose.rotation * nalgebra::Vector3::from(d);
                let w = [w[0], w[1], w[2]];
                let mut best: Option<(f64, Surface, f32)> = None;
                let mut consider = |t: f64, s: Surface, e: f32| {
                    if t <= self.sensor.max_range && best.is_none_or(|(bt, _, _)| t < bt) {
                        best = Some((t, s, e));
                    }
                };
                if let Some(gz) = self.ground_z {
                    if w[2] < 0.0 {
                        let t_hit = (gz - origin[2]) / w[2];
                        if t_hit > 1e-9 {
                            consider(t_hit, Surface::Ground, self.ground_intensity);
                        }
                    }
                }
                for (i, (lo, hi)) in statics.iter().enumerate() {
                    if let Some(t_hit) = ray_box(origin, w, *lo, *hi) {
                        consider(t_hit, Surface::Static(i), self.statics[i].intensity);
                    }
                }
                for (i, (lo, hi)) in movers.iter().enumerate() {
                    if let Some(t_hit) = ray_box(origin, w, *lo, *hi) {
                        consider(t_hit, Surface::Mover(i), self.movers[i].intensity);
                    }
                }
                if let Some((t_hit, surface, intensity)) = best {
                    hits.push(Hit {
                        point: [t_hit * d[0], t_hit * d[1], t_hit * d[2]],
                        range: t_hit,
                        surface,
                        intensity,
                    });
                }
            }
        }
        hits
    }

    pub fn label_of(&self, surface: Surface) -> MosLabel {
        match surface {
            Surface::Mover(i) if self.movers[i].is_moving() => MosLabel::Moving,
            _ => MosLabel::Static,
        }
    }

    /// Signed distance-like residual of a world point to its surface at
    /// frame `t`; zero means the point lies exactly on it.
    pub fn surface_residual(&self, t: usize, world: [f64; 3], surface: Surface) -> f64 {
        let box_residual = |(lo, hi): ([f64; 3], [f64; 3])| {
            let mut inside_gap = f64::INFINITY;
            let mut outside = 0.0f64;
            for k in 0..3 {
                let below = lo[k] - world[k];
                let above = world[k] - hi[k];
                outside = outside.max(below).max(above);
                inside_gap = inside_gap.min((world[k] - lo[k]).abs()).min((hi[k] - world[k]).abs());
            }
            if outside > 0.0 {
                outside
            } else {
                inside_gap
            }
        };
        match surface {
            Surface::Ground => (world[2] - self.ground_z.unwrap_or(0.0)).abs(),
            Surface::Static(i) => box_residual(self.statics[i].bounds(t)),
            Surface::Mover(i) => box_residual(self.movers[i].bounds(t)),
        }
    }
}

/// Simulates the configured scene into a labeled sequence with exact poses.
pub fn generate_synthetic_sequence(config: &SyntheticConfig) -> Result<ScanSequence> {
    config.validate()?;
    let mut frames = Vec::with_capacity(config.frames);
    for t in 0..config.frames {
        let hits = config.cast_frame(t);
        let cloud = PointCloud {
            points: hits
                .iter()
                .map(|h| [h.point[0] as f32, h.point[1] as f32, h.point[2] as f32])
                .collect(),
            intensity: hits.iter().map(|h| h.intensity).collect(),
            frame_id: t,
        };
        let labels = MosLabels {
            labels: hits.iter().map(|h| config.label_of(h.surface)).collect(),
            frame_id: t,
        };
        frames.push(Frame {
            cloud,
            pose: config.trajectory.pose(t),
            labels: Some(labels),
        });
    }
    ScanSequence::new(config.sequence_id.clone(), frames)
}
