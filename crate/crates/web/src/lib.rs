//! WebAssembly bindings for the browser demo in `www/`. Each operation
//! returns RGBA bytes ready for `ImageData`.

use motionseg::lidar_io::{generate_synthetic_sequence, MosLabel, ScanSequence, SyntheticConfig};
use motionseg::metrics::ConfusionCounts;
use motionseg::postprocess::{knn_refine, KnnConfig};
use motionseg::projection::{back_project_labels, build_range_image, render_range_rgb, ProjectionConfig, RangeImage};
use motionseg::residual::{build_residual_stack_with, render_residual_rgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js(e: motionseg::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn rgba(rgb: &[u8]) -> Vec<u8> {
    rgb.chunks_exact(3).flat_map(|c| [c[0], c[1], c[2], 255]).collect()
}

/// A simulated street sequence and the image geometry it is shown at.
#[wasm_bindgen]
pub struct Scene {
    seq: ScanSequence,
    proj: ProjectionConfig,
}

/// Outcome of the kNN cleanup of noisy pixel labels.
#[wasm_bindgen(getter_with_clone)]
pub struct KnnResult {
    pub noisy: Vec<u8>,
    pub refined: Vec<u8>,
    pub iou_noisy: f64,
    pub iou_refined: f64,
}

impl Scene {
    pub fn build(frames: usize, width: usize) -> motionseg::Result<Scene> {
        let proj = ProjectionConfig::with_size(64, width);
        proj.validate()?;
        let seq = generate_synthetic_sequence(&SyntheticConfig::street(frames, 64, 1024))?;
        Ok(Scene { seq, proj })
    }

    fn frame_index(&self, t: usize) -> usize {
        t.min(self.seq.len() - 1)
    }

    fn image(&self, t: usize) -> RangeImage {
        build_range_image(&self.seq.frame(self.frame_index(t)).cloud, &self.proj)
    }

    fn truth(&self, t: usize) -> &[MosLabel] {
        let labels = self.seq.frame(self.frame_index(t)).labels.as_ref();
        &labels.expect("synthetic frames are labeled").labels
    }

    /// Range image of frame `t`, moving points tinted red when `labels`.
    pub fn project_rgb(&self, t: usize, labels: bool) -> Vec<u8> {
        let image = self.image(t);
        let pixel = labels.then(|| image.pixel_labels(self.truth(t)));
        render_range_rgb(&image, pixel.as_deref())
    }

    /// Residual of frame `t` against frame `t - offset`.
    pub fn residual_rgb(&self, t: usize, offset: usize, scale: f32) -> motionseg::Result<Vec<u8>> {
        let l = self.frame_index(t);
        let image = self.image(l);
        let stack = build_residual_stack_with(&self.seq, l, offset.max(1), &self.proj, &image)?;
        Ok(render_residual_rgb(stack.channel(offset.max(1) - 1), scale))
    }

    /// Flips a share `noise` of the valid pixel labels, then lets the kNN
    /// vote repair them.
    pub fn knn_cleanup(&self, t: usize, noise: f64, config: &KnnConfig, seed: u64) -> motionseg::Result<KnnResult> {
        let image = self.image(t);
        let truth = self.truth(t);
        let cloud = &self.seq.frame(self.frame_index(t)).cloud;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy: Vec<MosLabel> = image
            .pixel_labels(truth)
            .into_iter()
            .map(|l| match l {
                MosLabel::Static if rng.random_bool(noise) => MosLabel::Moving,
                MosLabel::Moving if rng.random_bool(noise) => MosLabel::Static,
                l => l,
            })
            .collect();
        let before = back_project_labels(&noisy, &image);
        let after = knn_refine(cloud, &noisy, &image, config)?;
        Ok(KnnResult {
            noisy: render_range_rgb(&image, Some(&noisy)),
            refined: render_range_rgb(&image, Some(&image.pixel_labels(&after))),
            iou_noisy: ConfusionCounts::from_labels(&before, truth)?.iou(),
            iou_refined: ConfusionCounts::from_labels(&after, truth)?.iou(),
        })
    }
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(frames: usize, width: usize) -> Result<Scene, JsError> {
        Scene::build(frames, width).map_err(js)
    }

    pub fn frames(&self) -> usize {
        self.seq.len()
    }

    pub fn width(&self) -> usize {
        self.proj.width
    }

    pub fn height(&self) -> usize {
        self.proj.height
    }

    pub fn project(&self, t: usize, labels: bool) -> Vec<u8> {
        rgba(&self.project_rgb(t, labels))
    }

    pub fn residual(&self, t: usize, offset: usize, scale: f32) -> Result<Vec<u8>, JsError> {
        self.residual_rgb(t, offset, scale).map(|v| rgba(&v)).map_err(js)
    }

    pub fn knn(&self, t: usize, noise: f64, k: usize, window: usize, seed: u64) -> Result<KnnResult, JsError> {
        let config = KnnConfig {
            k,
            window,
            ..KnnConfig::default()
        };
        config.validate().map_err(js)?;
        let mut r = self.knn_cleanup(t, noise, &config, seed).map_err(js)?;
        r.noisy = rgba(&r.noisy);
        r.refined = rgba(&r.refined);
        Ok(r)
    }
}
