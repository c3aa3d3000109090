//! Flat `key = value` run configuration.
//!
//! One file covers training, tracking, synthetic data and the benchmark.
//! Blank lines and `#` comments are ignored; unknown keys are errors.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::bench::BenchConfig;
use crate::data::SynthConfig;
use crate::tracker::TrackerConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{source_name}:{line}: {msg}")]
    Syntax { source_name: String, line: usize, msg: String },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("invalid value '{value}' for '{key}'")]
    Value { key: String, value: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub train: TrainConfig,
    pub tracker: TrackerConfig,
    pub synth: SynthConfig,
    pub bench: BenchConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value { key: key.to_string(), value: value.to_string() })
}

/// Every accepted key, in the order `render` writes them.
pub const KEYS: &[&str] = &[
    "mu",
    "lr",
    "momentum",
    "weight_decay",
    "batch",
    "steps",
    "seed",
    "rho",
    "gamma",
    "omega",
    "lambda1",
    "lambda2",
    "grad_clip",
    "checkpoint_every",
    "template_size",
    "search_size",
    "context",
    "max_gap",
    "max_shift",
    "scale_jitter",
    "window_influence",
    "penalty_k",
    "size_lr",
    "width",
    "height",
    "length",
    "min_size",
    "max_size",
    "max_speed",
    "clutter",
    "noise_sigma",
    "drift",
    "occluder_prob",
    "train_sequences",
    "test_sequences",
    "train_length",
    "test_length",
    "data_seed",
];

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let t = &mut self.train;
        match key {
            "mu" => t.mu = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "momentum" => t.momentum = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "batch" => t.batch = parse(key, value)?,
            "steps" => t.steps = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "rho" => t.weights.rho = parse(key, value)?,
            "gamma" => t.weights.gamma = parse(key, value)?,
            "omega" => t.weights.omega = parse(key, value)?,
            "lambda1" => t.weights.lambda1 = parse(key, value)?,
            "lambda2" => t.weights.lambda2 = parse(key, value)?,
            "grad_clip" => t.grad_clip = parse(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            // Crop sizes live in both the architecture and the sampler.
            "template_size" => {
                t.arch.template_size = parse(key, value)?;
                t.sampler.template_size = t.arch.template_size;
            }
            "search_size" => {
                t.arch.search_size = parse(key, value)?;
                t.sampler.search_size = t.arch.search_size;
            }
            "context" => {
                t.sampler.context = parse(key, value)?;
                self.tracker.context = t.sampler.context;
            }
            "max_gap" => t.sampler.max_gap = parse(key, value)?,
            "max_shift" => t.sampler.max_shift = parse(key, value)?,
            "scale_jitter" => t.sampler.scale_jitter = parse(key, value)?,
            "window_influence" => self.tracker.window_influence = parse(key, value)?,
            "penalty_k" => self.tracker.penalty_k = parse(key, value)?,
            "size_lr" => self.tracker.size_lr = parse(key, value)?,
            "width" => self.synth.width = parse(key, value)?,
            "height" => self.synth.height = parse(key, value)?,
            "length" => self.synth.length = parse(key, value)?,
            "min_size" => self.synth.min_size = parse(key, value)?,
            "max_size" => self.synth.max_size = parse(key, value)?,
            "max_speed" => self.synth.max_speed = parse(key, value)?,
            "clutter" => self.synth.clutter = parse(key, value)?,
            "noise_sigma" => self.synth.noise_sigma = parse(key, value)?,
            "drift" => self.synth.drift = parse(key, value)?,
            "occluder_prob" => self.synth.occluder_prob = parse(key, value)?,
            "train_sequences" => self.bench.train_sequences = parse(key, value)?,
            "test_sequences" => self.bench.test_sequences = parse(key, value)?,
            "train_length" => self.bench.train_length = parse(key, value)?,
            "test_length" => self.bench.test_length = parse(key, value)?,
            "data_seed" => self.bench.data_seed = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        Some(match key {
            "mu" => t.mu.to_string(),
            "lr" => t.lr.to_string(),
            "momentum" => t.momentum.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "batch" => t.batch.to_string(),
            "steps" => t.steps.to_string(),
            "seed" => t.seed.to_string(),
            "rho" => t.weights.rho.to_string(),
            "gamma" => t.weights.gamma.to_string(),
            "omega" => t.weights.omega.to_string(),
            "lambda1" => t.weights.lambda1.to_string(),
            "lambda2" => t.weights.lambda2.to_string(),
            "grad_clip" => t.grad_clip.to_string(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "template_size" => t.arch.template_size.to_string(),
            "search_size" => t.arch.search_size.to_string(),
            "context" => t.sampler.context.to_string(),
            "max_gap" => t.sampler.max_gap.to_string(),
            "max_shift" => t.sampler.max_shift.to_string(),
            "scale_jitter" => t.sampler.scale_jitter.to_string(),
            "window_influence" => self.tracker.window_influence.to_string(),
            "penalty_k" => self.tracker.penalty_k.to_string(),
            "size_lr" => self.tracker.size_lr.to_string(),
            "width" => self.synth.width.to_string(),
            "height" => self.synth.height.to_string(),
            "length" => self.synth.length.to_string(),
            "min_size" => self.synth.min_size.to_string(),
            "max_size" => self.synth.max_size.to_string(),
            "max_speed" => self.synth.max_speed.to_string(),
            "clutter" => self.synth.clutter.to_string(),
            "noise_sigma" => self.synth.noise_sigma.to_string(),
            "drift" => self.synth.drift.to_string(),
            "occluder_prob" => self.synth.occluder_prob.to_string(),
            "train_sequences" => self.bench.train_sequences.to_string(),
            "test_sequences" => self.bench.test_sequences.to_string(),
            "train_length" => self.bench.train_length.to_string(),
            "test_length" => self.bench.test_length.to_string(),
            "data_seed" => self.bench.data_seed.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_str(&mut self, text: &str, source_name: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |msg: String| ConfigError::Syntax { source_name: source_name.to_string(), line: i + 1, msg };
            let (key, value) =
                line.split_once('=').ok_or_else(|| syntax(format!("expected key = value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(syntax(format!("empty key or value in '{line}'")));
            }
            self.set(key, value).map_err(|e| syntax(e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_str_with_defaults(text: &str, source_name: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_str(text, source_name)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_str_with_defaults(&text, &path.display().to_string())
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("listed key"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = Config::default();
        c.set("mu", "0.3").unwrap();
        c.set("search_size", "192").unwrap();
        c.set("scale_jitter", "0.125").unwrap();
        let back = Config::from_str_with_defaults(&c.render(), "rendered").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.train.sampler.search_size, 192);
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = Config::from_str_with_defaults("# header\n\nlr = 0.5  # inline\n", "t").unwrap();
        assert_eq!(c.train.lr, 0.5);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Config::from_str_with_defaults("lr = 1\nbogus = 2\n", "run.cfg").unwrap_err();
        assert!(e.to_string().starts_with("run.cfg:2:"), "{e}");
        assert!(Config::from_str_with_defaults("batch = two", "t").is_err());
        assert!(Config::from_str_with_defaults("just words", "t").is_err());
    }

    #[test]
    fn every_key_is_settable() {
        for key in KEYS {
            let mut c = Config::default();
            let v = c.get(key).unwrap();
            c.set(key, &v).unwrap();
        }
    }
}
