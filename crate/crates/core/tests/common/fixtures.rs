//! Synthetic scenes shared by the integration tests.

use motionseg::lidar_io::{generate_synthetic_sequence, ScanSequence, SyntheticConfig};
use motionseg::projection::ProjectionConfig;
use motionseg::training::{build_samples, Sample};

pub const TOY_HISTORY: usize = 8;

/// Street scene with one mover, rays on the 64×256 image grid; the 20
/// frames after the residual history.
pub fn toy_samples() -> Vec<Sample> {
    let seq = generate_synthetic_sequence(&SyntheticConfig::street(TOY_HISTORY + 20, 64, 256)).unwrap();
    let frames: Vec<usize> = (TOY_HISTORY..TOY_HISTORY + 20).collect();
    build_samples(&seq, &frames, &ProjectionConfig::with_size(64, 256), TOY_HISTORY, None).unwrap()
}

/// Rays four times denser in azimuth than the 64×256 image, so several
/// points share each pixel and object borders blur in the image.
pub fn boundary_sequence() -> ScanSequence {
    generate_synthetic_sequence(&SyntheticConfig::street(30, 64, 1024)).unwrap()
}

/// `(train, test)` splits of the boundary sequence.
pub fn boundary_samples() -> (Vec<Sample>, Vec<Sample>) {
    let seq = boundary_sequence();
    let proj = ProjectionConfig::with_size(64, 256);
    let train = build_samples(&seq, &(8..24).collect::<Vec<_>>(), &proj, TOY_HISTORY, None).unwrap();
    let test = build_samples(&seq, &(24..30).collect::<Vec<_>>(), &proj, TOY_HISTORY, None).unwrap();
    (train, test)
}
