//! Scan, pose, calibration and label ingestion plus the synthetic scene
//! generator.

mod kitti;
mod synthetic;
mod types;

pub use kitti::{
    decode_labels, decode_scan, encode_scan, load_sequence, parse_poses, read_calib, read_labels, read_labels_with,
    read_poses, read_scan, read_scan_report, sequence_dir, write_atomic, write_calib, write_labels, write_poses,
    write_scan, write_sequence, LabelRemap, ScanReport,
};
pub use synthetic::{generate_synthetic_sequence, BoxSpec, Hit, SensorConfig, Surface, SyntheticConfig, Trajectory};
pub use types::{Frame, MosLabel, MosLabels, PointCloud, Pose, ScanSequence};
