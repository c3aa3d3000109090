use rand::Rng;

use super::{crop_tensor, Sequence};
use crate::autodiff::Tensor;
use crate::geometry::{context_side, BBox, CropTransform};

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub template_size: usize,
    pub search_size: usize,
    /// Context margin factor around the target for template crops.
    pub context: f64,
    pub max_gap: usize,
    /// Largest displacement of the search-crop centre, in crop pixels.
    pub max_shift: f64,
    /// Search scale is multiplied by `exp(u)` with `u` uniform in `±scale_jitter`.
    pub scale_jitter: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { template_size: 96, search_size: 256, context: 0.5, max_gap: 30, max_shift: 16.0, scale_jitter: 0.05 }
    }
}

impl SamplerConfig {
    /// Template crop around `b`.
    pub fn template_transform(&self, b: &BBox) -> CropTransform {
        let (cx, cy) = b.center();
        CropTransform::centered(cx, cy, context_side(b.w, b.h, self.context), self.template_size)
    }

    /// Search crop centred on `(cx, cy)` at the scale implied by a `w x h` target.
    pub fn search_transform(&self, cx: f64, cy: f64, w: f64, h: f64) -> CropTransform {
        let side = context_side(w, h, self.context) * self.search_size as f64 / self.template_size as f64;
        CropTransform::centered(cx, cy, side, self.search_size)
    }
}

/// One training example.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingTuple {
    /// Template from the earlier frame.
    pub z: Tensor,
    /// Search region from the later frame.
    pub x: Tensor,
    /// Template cropped from the later frame at its ground truth.
    pub z_prime: Tensor,
    /// Target box in search-crop pixels.
    pub gt: BBox,
    pub x_transform: CropTransform,
    pub frames: (usize, usize),
}

/// Draws two frames at most `max_gap` apart and crops `Z`, `X` and `Z'`.
pub fn sample_tuple<R: Rng + ?Sized>(seq: &Sequence, cfg: &SamplerConfig, rng: &mut R) -> TrainingTuple {
    let n = seq.len();
    let a = rng.random_range(0..n);
    let b = rng.random_range(a..=(a + cfg.max_gap).min(n - 1));
    let (box_a, box_b) = (seq.boxes[a], seq.boxes[b]);

    let tz = cfg.template_transform(&box_a);
    let tzp = cfg.template_transform(&box_b);

    let jitter = if cfg.scale_jitter > 0.0 { rng.random_range(-cfg.scale_jitter..cfg.scale_jitter).exp() } else { 1.0 };
    let (cx, cy) = box_b.center();
    let base = cfg.search_transform(cx, cy, box_b.w * jitter, box_b.h * jitter);
    let shift = |rng: &mut R| {
        if cfg.max_shift > 0.0 {
            rng.random_range(-cfg.max_shift..=cfg.max_shift)
        } else {
            0.0
        }
    };
    let (dx, dy) = (shift(rng) * base.scale, shift(rng) * base.scale);
    let tx = CropTransform::centered(cx + dx, cy + dy, base.scale * cfg.search_size as f64, cfg.search_size);

    TrainingTuple {
        z: crop_tensor(&seq.frames[a], &tz),
        x: crop_tensor(&seq.frames[b], &tx),
        z_prime: crop_tensor(&seq.frames[b], &tzp),
        gt: tx.box_to_crop(&box_b),
        x_transform: tx,
        frames: (a, b),
    }
}
