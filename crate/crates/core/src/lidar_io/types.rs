use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One LiDAR sweep in the sensor frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
    pub intensity: Vec<f32>,
    pub frame_id: usize,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 3]>, intensity: Vec<f32>, frame_id: usize) -> Result<Self> {
        if points.len() != intensity.len() {
            return Err(Error::Shape(format!(
                "{} points but {} intensities",
                points.len(),
                intensity.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Numeric(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            intensity,
            frame_id,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn range(&self, i: usize) -> f32 {
        let [x, y, z] = self.points[i];
        (x * x + y * y + z * z).sqrt()
    }

    /// Keeps the points whose index satisfies `keep`, preserving order.
    pub fn filter_indices(&self, mut keep: impl FnMut(usize) -> bool) -> (PointCloud, Vec<usize>) {
        let kept: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        let cloud = PointCloud {
            points: kept.iter().map(|&i| self.points[i]).collect(),
            intensity: kept.iter().map(|&i| self.intensity[i]).collect(),
            frame_id: self.frame_id,
        };
        (cloud, kept)
    }
}

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Rigid sensor-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validating constructor: the rotation must be orthonormal with
    /// determinant +1 to within 1e-6.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self { rotation, translation };
        let err = pose.orthonormality_error();
        if !(err <= ORTHONORMAL_TOL) || !translation.iter().all(|t| t.is_finite()) {
            return Err(Error::Numeric(format!("rotation is not orthonormal (error {err:.3e})")));
        }
        Ok(pose)
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Rotation about the z axis followed by a translation.
    pub fn from_yaw_translation(yaw: f64, translation: [f64; 3]) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation: Vector3::from(translation),
        }
    }

    /// Row-major 3×4 `[R | t]`, the layout of KITTI pose and calibration lines.
    pub fn from_row_major_3x4(v: &[f64; 12]) -> Self {
        Self {
            rotation: Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
            translation: Vector3::new(v[3], v[7], v[11]),
        }
    }

    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    /// max |RᵀR − I| plus |det R − 1|.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let gram = r.transpose() * r - Matrix3::identity();
        gram.amax() + (r.determinant() - 1.0).abs()
    }

    /// Projects the rotation onto SO(3) (nearest rotation in Frobenius norm).
    pub fn orthonormalized(&self) -> Self {
        let svd = self.rotation.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut rotation = u * v_t;
        if rotation.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            rotation = u * v_t;
        }
        Self {
            rotation,
            translation: self.translation,
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.rotation * Vector3::from(p) + self.translation;
        [q[0], q[1], q[2]]
    }
}

/// Per-point motion class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MosLabel {
    #[default]
    Unlabeled,
    Static,
    Moving,
}

impl MosLabel {
    /// Class index used by network heads. With two classes `Unlabeled` is
    /// ignored; with three it becomes class 0.
    pub fn class_index(self, head_classes: usize) -> Option<usize> {
        match (head_classes, self) {
            (2, MosLabel::Unlabeled) => None,
            (2, MosLabel::Static) => Some(0),
            (2, MosLabel::Moving) => Some(1),
            (_, MosLabel::Unlabeled) => Some(0),
            (_, MosLabel::Static) => Some(1),
            (_, MosLabel::Moving) => Some(2),
        }
    }

    pub fn from_class_index(index: usize, head_classes: usize) -> MosLabel {
        match (head_classes, index) {
            (2, 1) => MosLabel::Moving,
            (2, _) => MosLabel::Static,
            (_, 2) => MosLabel::Moving,
            (_, 1) => MosLabel::Static,
            _ => MosLabel::Unlabeled,
        }
    }

    pub fn is_moving(self) -> bool {
        self == MosLabel::Moving
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MosLabels {
    pub labels: Vec<MosLabel>,
    pub frame_id: usize,
}

impl MosLabels {
    pub fn moving_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_moving()).count()
    }
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub cloud: PointCloud,
    pub pose: Pose,
    pub labels: Option<MosLabels>,
}

/// Time-ordered scans with their world poses.
#[derive(Debug, Clone)]
pub struct ScanSequence {
    pub sequence_id: String,
    frames: Vec<Frame>,
}

impl ScanSequence {
    pub fn new(sequence_id: impl Into<String>, frames: Vec<Frame>) -> Result<Self> {
        for pair in frames.windows(2) {
            if pair[1].cloud.frame_id <= pair[0].cloud.frame_id {
                return Err(Error::Config(format!(
                    "frame ids must be strictly increasing ({} then {})",
                    pair[0].cloud.frame_id, pair[1].cloud.frame_id
                )));
            }
        }
        for f in &frames {
            if let Some(l) = &f.labels {
                if l.labels.len() != f.cloud.len() {
                    return Err(Error::Shape(format!(
                        "frame {}: {} labels for {} points",
                        f.cloud.frame_id,
                        l.labels.len(),
                        f.cloud.len()
                    )));
                }
            }
        }
        Ok(Self {
            sequence_id: sequence_id.into(),
            frames,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, index: usize) -> &Frame {
        &self.frames[index]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_inverse_composes_to_identity() {
        let p = Pose::from_yaw_translation(0.7, [1.0, -2.0, 0.5]);
        let id = p.compose(&p.inverse());
        assert!((id.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(id.translation.amax() < 1e-12);
    }

    #[test]
    fn non_orthonormal_rotation_rejected() {
        let r = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(r, Vector3::zeros()).is_err());
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(reflect, Vector3::zeros()).is_err());
    }

    #[test]
    fn orthonormalize_repairs_small_drift() {
        let mut p = Pose::from_yaw_translation(0.3, [0.0; 3]);
        p.rotation[(0, 1)] += 1e-4;
        assert!(p.orthonormality_error() > 1e-6);
        assert!(p.orthonormalized().orthonormality_error() < 1e-12);
    }

    #[test]
    fn class_index_round_trip() {
        for heads in [2, 3] {
            for l in [MosLabel::Static, MosLabel::Moving] {
                let c = l.class_index(heads).unwrap();
                assert_eq!(MosLabel::from_class_index(c, heads), l);
            }
        }
        assert_eq!(MosLabel::Unlabeled.class_index(2), None);
    }

    #[test]
    fn cloud_rejects_mismatched_lengths_and_nan() {
        assert!(PointCloud::new(vec![[0.0; 3]], vec![], 0).is_err());
        assert!(PointCloud::new(vec![[f32::NAN, 0.0, 0.0]], vec![0.0], 0).is_err());
    }
}
