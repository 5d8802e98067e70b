//! KITTI odometry / SemanticKITTI file formats.
//!
//! Layout of a sequence directory:
//!
//! ```text
//! <root>/sequences/<seq>/velodyne/000000.bin   x,y,z,intensity as f32 LE
//! <root>/sequences/<seq>/labels/000000.label   u32 LE per point, low 16 bits = semantic id
//! <root>/sequences/<seq>/poses.txt             12 floats per line, camera frame
//! <root>/sequences/<seq>/calib.txt             "Tr:" line maps LiDAR -> camera
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::types::{Frame, MosLabel, MosLabels, PointCloud, Pose, ScanSequence};
use crate::error::{Error, Result};

const BYTES_PER_POINT: usize = 16;

/// Result of decoding a scan: the finite points plus the raw indices that
/// were dropped for non-finite values.
#[derive(Debug, Clone, Default)]
pub struct ScanReport {
    pub dropped: Vec<usize>,
}

pub fn read_scan(path: impl AsRef<Path>) -> Result<PointCloud> {
    read_scan_report(path).map(|(cloud, _)| cloud)
}

pub fn read_scan_report(path: impl AsRef<Path>) -> Result<(PointCloud, ScanReport)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (mut cloud, report) = decode_scan(&bytes).map_err(|m| Error::format(path, m))?;
    cloud.frame_id = frame_id_from_path(path).unwrap_or(0);
    Ok((cloud, report))
}

pub fn decode_scan(bytes: &[u8]) -> std::result::Result<(PointCloud, ScanReport), String> {
    if !bytes.len().is_multiple_of(BYTES_PER_POINT) {
        return Err(format!(
            "byte length {} is not a multiple of {BYTES_PER_POINT}",
            bytes.len()
        ));
    }
    let n = bytes.len() / BYTES_PER_POINT;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    let mut report = ScanReport::default();
    for (i, rec) in bytes.chunks_exact(BYTES_PER_POINT).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        let (x, y, z, e) = (f(0), f(1), f(2), f(3));
        if !(x.is_finite() && y.is_finite() && z.is_finite() && e.is_finite()) {
            report.dropped.push(i);
            continue;
        }
        points.push([x, y, z]);
        intensity.push(e.clamp(0.0, 1.0));
    }
    Ok((
        PointCloud {
            points,
            intensity,
            frame_id: 0,
        },
        report,
    ))
}

pub fn encode_scan(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * BYTES_PER_POINT);
    for (p, e) in cloud.points.iter().zip(&cloud.intensity) {
        for v in [p[0], p[1], p[2], *e] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_scan(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_scan(cloud)).map_err(|e| Error::io(path, e))
}

fn frame_id_from_path(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.parse().ok()
}

fn parse_floats<const N: usize>(path: &Path, line_no: usize, tokens: &[&str]) -> Result<[f64; N]> {
    if tokens.len() != N {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("expected {N} numbers, found {}", tokens.len()),
        });
    }
    let mut out = [0.0; N];
    for (o, t) in out.iter_mut().zip(tokens) {
        *o = t.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("not a number: {t:?}"),
        })?;
    }
    Ok(out)
}

/// Reads the `Tr:` (LiDAR -> camera) transform of a KITTI `calib.txt`.
pub fn read_calib(path: impl AsRef<Path>) -> Result<Pose> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.trim_start().strip_prefix("Tr:") {
            let tokens: Vec<&str> = rest.split_whitespace().collect();
            let v = parse_floats::<12>(path, i + 1, &tokens)?;
            return Ok(Pose::from_row_major_3x4(&v).orthonormalized());
        }
    }
    Err(Error::format(path, "no `Tr:` line"))
}

/// Parses KITTI camera-frame poses and conjugates them into the LiDAR frame:
/// `T_lidar = Tr⁻¹ · T_cam · Tr`.
pub fn parse_poses(text: &str, calib: &Pose, path: &Path) -> Result<Vec<Pose>> {
    let calib_inv = calib.inverse();
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let v = parse_floats::<12>(path, i + 1, &tokens)?;
        let cam = Pose::from_row_major_3x4(&v);
        poses.push(calib_inv.compose(&cam).compose(calib).orthonormalized());
    }
    Ok(poses)
}

pub fn read_poses(path: impl AsRef<Path>, calib: &Pose) -> Result<Vec<Pose>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text, calib, path)
}

/// Inverse of [`read_poses`]: writes LiDAR-frame poses as camera-frame lines.
pub fn write_poses(path: impl AsRef<Path>, poses: &[Pose], calib: &Pose) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for p in poses {
        let cam = calib.compose(p).compose(&calib.inverse());
        let row: Vec<String> = cam.to_row_major_3x4().iter().map(|v| format!("{v:e}")).collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_calib(path: impl AsRef<Path>, calib: &Pose) -> Result<()> {
    let path = path.as_ref();
    let row: Vec<String> = calib.to_row_major_3x4().iter().map(|v| format!("{v:e}")).collect();
    fs::write(path, format!("Tr: {}\n", row.join(" "))).map_err(|e| Error::io(path, e))
}

/// Semantic id -> motion class table. Loaded from TOML:
///
/// ```toml
/// unlabeled = [0]
/// static = [9]
/// moving = [251]
/// default = "static"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRemap {
    #[serde(default)]
    pub unlabeled: Vec<u16>,
    #[serde(default, rename = "static")]
    pub static_ids: Vec<u16>,
    #[serde(default)]
    pub moving: Vec<u16>,
    /// Class for every id not listed above.
    pub default: MosLabel,
}

impl Default for LabelRemap {
    fn default() -> Self {
        Self {
            unlabeled: vec![0],
            static_ids: vec![9],
            moving: vec![251],
            default: MosLabel::Static,
        }
    }
}

impl LabelRemap {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("label remap: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn map(&self, semantic_id: u16) -> MosLabel {
        if self.unlabeled.contains(&semantic_id) {
            MosLabel::Unlabeled
        } else if self.moving.contains(&semantic_id) {
            MosLabel::Moving
        } else if self.static_ids.contains(&semantic_id) {
            MosLabel::Static
        } else {
            self.default
        }
    }

    /// Canonical raw id written for each class.
    pub fn raw_id(&self, label: MosLabel) -> u16 {
        let pick = |ids: &[u16], fallback| ids.first().copied().unwrap_or(fallback);
        match label {
            MosLabel::Unlabeled => pick(&self.unlabeled, 0),
            MosLabel::Static => pick(&self.static_ids, 9),
            MosLabel::Moving => pick(&self.moving, 251),
        }
    }
}

pub fn decode_labels(bytes: &[u8], remap: &LabelRemap) -> std::result::Result<Vec<MosLabel>, String> {
    if !bytes.len().is_multiple_of(4) {
        return Err(format!("byte length {} is not a multiple of 4", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|w| {
            let word = u32::from_le_bytes(w.try_into().unwrap());
            remap.map((word & 0xffff) as u16)
        })
        .collect())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<MosLabels> {
    read_labels_with(path, &LabelRemap::default())
}

pub fn read_labels_with(path: impl AsRef<Path>, remap: &LabelRemap) -> Result<MosLabels> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let labels = decode_labels(&bytes, remap).map_err(|m| Error::format(path, m))?;
    Ok(MosLabels {
        labels,
        frame_id: frame_id_from_path(path).unwrap_or(0),
    })
}

pub fn write_labels(path: impl AsRef<Path>, labels: &MosLabels, remap: &LabelRemap) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(labels.labels.len() * 4);
    for l in &labels.labels {
        out.extend_from_slice(&(remap.raw_id(*l) as u32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn sequence_dir(root: &Path, sequence_id: &str) -> PathBuf {
    root.join("sequences").join(sequence_id)
}

/// Loads a whole sequence. Labels are attached when a `labels/` directory is
/// present; points dropped as non-finite are dropped from the labels too.
pub fn load_sequence(root: impl AsRef<Path>, sequence_id: &str, remap: &LabelRemap) -> Result<ScanSequence> {
    let dir = sequence_dir(root.as_ref(), sequence_id);
    let velodyne = dir.join("velodyne");
    let mut scans: Vec<PathBuf> = fs::read_dir(&velodyne)
        .map_err(|e| Error::io(&velodyne, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    scans.sort();
    let calib_path = dir.join("calib.txt");
    let calib = if calib_path.exists() {
        read_calib(&calib_path)?
    } else {
        Pose::identity()
    };
    let poses = read_poses(dir.join("poses.txt"), &calib)?;
    if poses.len() < scans.len() {
        return Err(Error::format(
            dir.join("poses.txt"),
            format!("{} poses for {} scans", poses.len(), scans.len()),
        ));
    }
    let label_dir = dir.join("labels");
    let mut frames = Vec::with_capacity(scans.len());
    for (scan_path, pose) in scans.iter().zip(poses) {
        let (cloud, report) = read_scan_report(scan_path)?;
        let label_path = label_dir.join(scan_path.file_stem().unwrap()).with_extension("label");
        let labels = if label_path.exists() {
            let mut l = read_labels_with(&label_path, remap)?;
            if l.labels.len() != cloud.len() + report.dropped.len() {
                return Err(Error::format(
                    &label_path,
                    format!(
                        "{} labels for {} points",
                        l.labels.len(),
                        cloud.len() + report.dropped.len()
                    ),
                ));
            }
            if !report.dropped.is_empty() {
                let mut dropped = report.dropped.iter().peekable();
                let mut kept = Vec::with_capacity(cloud.len());
                for (i, lab) in l.labels.iter().enumerate() {
                    if dropped.peek() == Some(&&i) {
                        dropped.next();
                    } else {
                        kept.push(*lab);
                    }
                }
                l.labels = kept;
            }
            l.frame_id = cloud.frame_id;
            Some(l)
        } else {
            None
        };
        frames.push(Frame { cloud, pose, labels });
    }
    ScanSequence::new(sequence_id, frames)
}

/// Writes a sequence in the layout read by [`load_sequence`].
pub fn write_sequence(root: impl AsRef<Path>, seq: &ScanSequence, remap: &LabelRemap) -> Result<()> {
    let dir = sequence_dir(root.as_ref(), &seq.sequence_id);
    let velodyne = dir.join("velodyne");
    let labels = dir.join("labels");
    for d in [&velodyne, &labels] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let calib = Pose::identity();
    write_calib(dir.join("calib.txt"), &calib)?;
    let poses: Vec<Pose> = seq.frames().iter().map(|f| f.pose).collect();
    write_poses(dir.join("poses.txt"), &poses, &calib)?;
    for f in seq.frames() {
        let stem = format!("{:06}", f.cloud.frame_id);
        write_scan(velodyne.join(format!("{stem}.bin")), &f.cloud)?;
        if let Some(l) = &f.labels {
            write_labels(labels.join(format!("{stem}.label")), l, remap)?;
        }
    }
    Ok(())
}

/// Writes `bytes` to `path` through a temporary sibling so an interrupted run
/// never leaves a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
