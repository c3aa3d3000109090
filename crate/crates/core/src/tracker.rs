//! Online single-object tracking with a trained network.

use std::time::Instant;

use crate::autodiff::{kernels::sigmoid, Graph, Tensor, TensorError};
use crate::data::{crop_tensor, DataError, FrameSource, Image, SamplerConfig};
use crate::geometry::BBox;
use crate::loss::ScoreGrid;
use crate::model::{ArchitectureSpec, ModelError, ModelParams, Network, Task};

#[derive(Debug, thiserror::Error)]
pub enum TrackError {
    #[error("degenerate box: {0}")]
    Degenerate(String),
    #[error("sequence needs at least 2 frames, got {0}")]
    TooShort(usize),
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: DataError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Inference hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackerConfig {
    pub context: f64,
    /// Blend weight of the cosine window against the penalized score.
    pub window_influence: f64,
    /// Exponent of the scale/aspect change penalty.
    pub penalty_k: f64,
    /// Fraction of the way the size moves toward each new estimate, further
    /// scaled by the penalized score of the chosen box.
    pub size_lr: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { context: 0.5, window_influence: 0.3, penalty_k: 0.04, size_lr: 0.6 }
    }
}

/// Per-sequence tracking state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackerState {
    /// Post-neck template features for classification and regression.
    pub kernel_cls: Tensor,
    pub kernel_reg: Tensor,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl TrackerState {
    pub fn bbox(&self) -> BBox {
        BBox::from_center(self.cx, self.cy, self.w, self.h)
    }
}

/// Hanning window of side `n`, outer product, peak 1 at the centre.
pub fn cosine_window(n: usize) -> Vec<f64> {
    let hann: Vec<f64> =
        (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (i + 1) as f64 / (n + 1) as f64).cos()).collect();
    let peak = hann.iter().cloned().fold(0.0, f64::max);
    let mut w = Vec::with_capacity(n * n);
    for a in &hann {
        for b in &hann {
            w.push(a * b / (peak * peak));
        }
    }
    w
}

/// `(1 - wi) * score * penalty + wi * window`.
pub fn modulate_scores(score: &[f64], penalty: &[f64], window: &[f64], wi: f64) -> Vec<f64> {
    score.iter().zip(penalty).zip(window).map(|((s, p), w)| (1.0 - wi) * s * p + wi * w).collect()
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn change(r: f64) -> f64 {
    r.max(1.0 / r)
}

fn padded_size(w: f64, h: f64) -> f64 {
    let p = (w + h) / 2.0;
    ((w + p) * (h + p)).sqrt()
}

/// Tracker bound to one set of weights.
pub struct Tracker<'a> {
    spec: &'a ArchitectureSpec,
    params: &'a ModelParams,
    pub config: TrackerConfig,
    crops: SamplerConfig,
    grid: ScoreGrid,
    window: Vec<f64>,
}

impl<'a> Tracker<'a> {
    pub fn new(spec: &'a ArchitectureSpec, params: &'a ModelParams, config: TrackerConfig) -> Result<Self, TrackError> {
        if params.meta.spec_hash != spec.hash() {
            return Err(ModelError::from(crate::model::CheckpointError::SpecHash).into());
        }
        params.validate_against(spec)?;
        let grid = ScoreGrid::from_spec(spec)?;
        let crops = SamplerConfig {
            template_size: spec.template_size,
            search_size: spec.search_size,
            context: config.context,
            ..SamplerConfig::default()
        };
        Ok(Self { spec, params, config, crops, window: cosine_window(grid.size), grid })
    }

    /// Stores template features of `bbox` in `frame`.
    pub fn init(&self, frame: &Image, bbox: &BBox) -> Result<TrackerState, TrackError> {
        if !bbox.is_valid() || bbox.w < 2.0 || bbox.h < 2.0 {
            return Err(TrackError::Degenerate(format!("{bbox:?} must be at least 2x2 px")));
        }
        let z = crop_tensor(frame, &self.crops.template_transform(bbox));
        let mut g = Graph::new();
        let net = Network::bind(&mut g, self.spec, self.params, false)?;
        let zv = g.constant(z);
        let f = net.backbone_forward(&mut g, zv)?;
        let r = net.related(&mut g, f)?;
        let kc = net.template_kernel(&mut g, r, Task::Cls)?;
        let kr = net.template_kernel(&mut g, r, Task::Reg)?;
        let (cx, cy) = bbox.center();
        Ok(TrackerState {
            kernel_cls: g.value(kc).clone(),
            kernel_reg: g.value(kr).clone(),
            cx,
            cy,
            w: bbox.w,
            h: bbox.h,
        })
    }

    /// Locates the target in `frame` and advances `state`.
    pub fn update(&self, state: &mut TrackerState, frame: &Image) -> Result<BBox, TrackError> {
        let t = self.crops.search_transform(state.cx, state.cy, state.w, state.h);
        let x = crop_tensor(frame, &t);
        let mut g = Graph::new();
        let net = Network::bind(&mut g, self.spec, self.params, false)?;
        let xv = g.constant(x);
        let kc = g.constant(state.kernel_cls.clone());
        let kr = g.constant(state.kernel_reg.clone());
        let f = net.backbone_forward(&mut g, xv)?;
        let r = net.related(&mut g, f)?;
        let cls = net.correlate(&mut g, kc, r, Task::Cls)?;
        let reg = net.correlate(&mut g, kr, r, Task::Reg)?;
        let head = net.head_forward(&mut g, cls, reg)?;

        let n = self.grid.size;
        let cells = n * n;
        let cls = g.value(head.cls_logits).data();
        let qual = g.value(head.quality_logits).data();
        let off = g.value(head.reg_offsets).data();
        let score: Vec<f64> = (0..cells).map(|k| sigmoid(cls[k]) * sigmoid(qual[k])).collect();

        let (prev_w, prev_h) = (state.w / t.scale, state.h / t.scale);
        let boxes: Vec<BBox> = (0..cells)
            .map(|k| {
                let (px, py) = self.grid.point(k / n, k % n);
                let [l, tp, r, b] = [0, 1, 2, 3].map(|c| off[c * cells + k]);
                BBox::from_corners(px - l, py - tp, px + r, py + b)
            })
            .collect();
        let penalty: Vec<f64> = boxes
            .iter()
            .map(|b| {
                let s = change(padded_size(b.w, b.h) / padded_size(prev_w, prev_h));
                let r = change((prev_w / prev_h) / (b.w / b.h));
                (-(s * r - 1.0) * self.config.penalty_k).exp()
            })
            .collect();
        let modulated = modulate_scores(&score, &penalty, &self.window, self.config.window_influence);
        let k = argmax(&modulated);
        let best = boxes[k];

        let fb = t.box_to_frame(&best);
        let (cx, cy) = fb.center();
        let lr = self.config.size_lr * penalty[k] * score[k];
        let w = (1.0 - lr) * state.w + lr * fb.w;
        let h = (1.0 - lr) * state.h + lr * fb.h;
        let (fw, fh) = (frame.width as f64, frame.height as f64);
        state.cx = if cx.is_finite() { cx.clamp(0.0, fw) } else { state.cx };
        state.cy = if cy.is_finite() { cy.clamp(0.0, fh) } else { state.cy };
        state.w = if w.is_finite() { w.clamp(2.0, fw) } else { state.w };
        state.h = if h.is_finite() { h.clamp(2.0, fh) } else { state.h };
        Ok(state.bbox())
    }

    /// One-pass run: initialize on `init_box` at frame 0, then update on
    /// every later frame. Only `update` calls are timed.
    pub fn track_sequence(&self, frames: &mut dyn FrameSource, init_box: &BBox) -> Result<TrackResult, TrackError> {
        let n = frames.len();
        if n < 2 {
            return Err(TrackError::TooShort(n));
        }
        let first = frames.frame(0).map_err(|source| TrackError::Frame { frame: 0, source })?;
        let mut state = self.init(&first, init_box)?;
        let mut boxes = vec![*init_box];
        let mut times = Vec::with_capacity(n - 1);
        for i in 1..n {
            let frame = frames.frame(i).map_err(|source| TrackError::Frame { frame: i, source })?;
            let start = Instant::now();
            let b = self.update(&mut state, &frame)?;
            times.push(start.elapsed().as_secs_f64());
            boxes.push(b);
        }
        Ok(TrackResult { boxes, times })
    }
}

/// Boxes for every frame and the wall time of every update in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackResult {
    pub boxes: Vec<BBox>,
    pub times: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_peaks_at_centre() {
        let w = cosine_window(5);
        assert_eq!(argmax(&w), 12);
        assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!((w[12] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn full_window_weight_dominates_uniform_scores() {
        let n = 7;
        let score = vec![0.5; n * n];
        let m = modulate_scores(&score, &vec![1.0; n * n], &cosine_window(n), 1.0);
        assert_eq!(argmax(&m), n * n / 2);
    }

    #[test]
    fn zero_window_keeps_raw_order() {
        let score = vec![0.1, 0.9, 0.3, 0.2];
        let m = modulate_scores(&score, &[1.0; 4], &cosine_window(2), 0.0);
        assert_eq!(m, score);
    }
}
