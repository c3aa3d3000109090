use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DataError, Image, Sequence};
use crate::geometry::BBox;

/// Parameters of a synthetic single-object sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub length: usize,
    /// Object side range in pixels, inclusive.
    pub min_size: usize,
    pub max_size: usize,
    /// Largest per-axis speed in pixels per frame.
    pub max_speed: f64,
    /// Number of static background blobs.
    pub clutter: usize,
    /// Standard deviation of per-pixel Gaussian noise, in gray levels.
    pub noise_sigma: f64,
    /// Fraction of the way the object colors move toward an alternate
    /// palette per frame.
    pub drift: f64,
    /// Per-frame probability of starting an occlusion episode.
    pub occluder_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            length: 60,
            min_size: 24,
            max_size: 48,
            max_speed: 3.0,
            clutter: 6,
            noise_sigma: 4.0,
            drift: 0.005,
            occluder_prob: 0.01,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let err = |m: String| Err(DataError::Config(m));
        if self.length == 0 {
            return err("sequence length must be at least 1".into());
        }
        if self.min_size < 4 || self.min_size > self.max_size {
            return err(format!("object size range {}..={} is invalid", self.min_size, self.max_size));
        }
        if self.max_size >= self.width.min(self.height) {
            return err(format!(
                "object up to {} px does not fit a {}x{} canvas",
                self.max_size, self.width, self.height
            ));
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.max_speed) || !finite_nonneg(self.noise_sigma) || !finite_nonneg(self.drift) {
            return err("speed, noise and drift must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.occluder_prob) {
            return err(format!("occluder probability {} outside [0, 1]", self.occluder_prob));
        }
        Ok(())
    }
}

type Rgb = [f64; 3];

fn random_color(rng: &mut ChaCha8Rng) -> Rgb {
    [0; 3].map(|_| rng.random_range(20.0..235.0))
}

fn mix(a: Rgb, b: Rgb, t: f64) -> Rgb {
    [0, 1, 2].map(|c| a[c] * (1.0 - t) + b[c] * t)
}

#[derive(Clone, Copy)]
enum Pattern {
    Checker(f64),
    Stripes(f64, bool),
    Rings(f64),
}

struct Appearance {
    pattern: Pattern,
    colors: [Rgb; 2],
    alternate: [Rgb; 2],
}

impl Appearance {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let cell = rng.random_range(3.0..7.0);
        let pattern = match rng.random_range(0..3) {
            0 => Pattern::Checker(cell),
            1 => Pattern::Stripes(cell, rng.random_bool(0.5)),
            _ => Pattern::Rings(cell),
        };
        let colors = [random_color(rng), random_color(rng)];
        let alternate = [random_color(rng), random_color(rng)];
        Self { pattern, colors, alternate }
    }

    fn color(&self, u: f64, v: f64, w: f64, h: f64, drift: f64) -> Rgb {
        let second = match self.pattern {
            Pattern::Checker(c) => ((u / c).floor() as i64 + (v / c).floor() as i64) % 2 == 1,
            Pattern::Stripes(c, vertical) => ((if vertical { u } else { v }) / c).floor() as i64 % 2 == 1,
            Pattern::Rings(c) => ((u - w / 2.0).hypot(v - h / 2.0) / c).floor() as i64 % 2 == 1,
        };
        let k = usize::from(second);
        mix(self.colors[k], self.alternate[k], drift)
    }
}

fn fill_rect(canvas: &mut [Rgb], width: usize, rect: (usize, usize, usize, usize), color: Rgb) {
    let (x0, y0, x1, y1) = rect;
    for y in y0..y1 {
        for x in x0..x1 {
            canvas[y * width + x] = color;
        }
    }
}

fn background(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Rgb> {
    let (w, h) = (cfg.width, cfg.height);
    let base = random_color(rng);
    let tint = random_color(rng);
    let (fx, fy, phase) = (rng.random_range(0.01..0.05), rng.random_range(0.01..0.05), rng.random_range(0.0..6.3));
    let mut canvas: Vec<Rgb> = (0..w * h)
        .map(|k| {
            let (x, y) = ((k % w) as f64, (k / w) as f64);
            let t = 0.5 + 0.5 * (x * fx + phase).sin() * (y * fy).cos();
            mix(base, tint, 0.35 * t)
        })
        .collect();
    for _ in 0..cfg.clutter {
        let bw = rng.random_range(cfg.min_size / 2..=cfg.max_size);
        let bh = rng.random_range(cfg.min_size / 2..=cfg.max_size);
        let x0 = rng.random_range(0..w - bw);
        let y0 = rng.random_range(0..h - bh);
        let color = random_color(rng);
        let ellipse = rng.random_bool(0.5);
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                let du = (x - x0) as f64 / bw as f64 - 0.5;
                let dv = (y - y0) as f64 / bh as f64 - 0.5;
                if !ellipse || du * du + dv * dv <= 0.25 {
                    canvas[y * w + x] = color;
                }
            }
        }
    }
    canvas
}

struct Occlusion {
    rect: (usize, usize, usize, usize),
    frames_left: usize,
    color: Rgb,
}

/// Renders a seeded sequence of a textured rectangle bouncing over a
/// cluttered background. The ground truth is the object's pixel box.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Sequence, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (cw, ch) = (cfg.width, cfg.height);
    let bg = background(cfg, &mut rng);
    let look = Appearance::random(&mut rng);
    let ow = rng.random_range(cfg.min_size..=cfg.max_size);
    let oh = rng.random_range(cfg.min_size..=cfg.max_size);
    let (max_x, max_y) = ((cw - ow) as f64, (ch - oh) as f64);
    let mut x = rng.random_range(0.0..=max_x);
    let mut y = rng.random_range(0.0..=max_y);
    let speed = |rng: &mut ChaCha8Rng| {
        if cfg.max_speed > 0.0 {
            rng.random_range(-cfg.max_speed..=cfg.max_speed)
        } else {
            0.0
        }
    };
    let (mut vx, mut vy) = (speed(&mut rng), speed(&mut rng));
    let mut occlusion: Option<Occlusion> = None;

    let mut frames = Vec::with_capacity(cfg.length);
    let mut boxes = Vec::with_capacity(cfg.length);
    for t in 0..cfg.length {
        if t > 0 {
            x += vx;
            y += vy;
            if x < 0.0 || x > max_x {
                vx = -vx;
                x = x.clamp(0.0, max_x);
            }
            if y < 0.0 || y > max_y {
                vy = -vy;
                y = y.clamp(0.0, max_y);
            }
        }
        let (ix, iy) = (x.round() as usize, y.round() as usize);
        let drift = (cfg.drift * t as f64).min(1.0);

        let mut canvas = bg.clone();
        for v in 0..oh {
            for u in 0..ow {
                canvas[(iy + v) * cw + ix + u] = look.color(u as f64, v as f64, ow as f64, oh as f64, drift);
            }
        }

        if occlusion.is_none() && cfg.occluder_prob > 0.0 && rng.random_bool(cfg.occluder_prob) {
            let bar_w = (ow / 2).max(2);
            let bar_h = (oh * 3 / 2).min(ch);
            let cx = ix + ow / 2;
            let x0 = cx.saturating_sub(bar_w / 2).min(cw - bar_w);
            let y0 = (iy + oh / 2).saturating_sub(bar_h / 2).min(ch - bar_h);
            occlusion = Some(Occlusion {
                rect: (x0, y0, x0 + bar_w, y0 + bar_h),
                frames_left: rng.random_range(5..=10),
                color: random_color(&mut rng),
            });
        }
        if let Some(occ) = occlusion.as_mut() {
            fill_rect(&mut canvas, cw, occ.rect, occ.color);
            occ.frames_left -= 1;
            if occ.frames_left == 0 {
                occlusion = None;
            }
        }

        let mut data = Vec::with_capacity(cw * ch * 3);
        for px in &canvas {
            for &c in px {
                let noise =
                    if cfg.noise_sigma > 0.0 { cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
                data.push((c + noise).round().clamp(0.0, 255.0) as u8);
            }
        }
        frames.push(Image::new(cw, ch, data).expect("canvas size"));
        boxes.push(BBox::new(ix as f64, iy as f64, ow as f64, oh as f64));
    }
    Sequence::new(format!("synth_{:04}", cfg.seed), frames, boxes)
}
