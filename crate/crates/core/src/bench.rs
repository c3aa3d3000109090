//! Desk-scale experiments: the synthetic tracking benchmark, the pruning
//! ratio sweep and the Gaussian MI critic.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Graph, Tensor, TensorError, Var};
use crate::config::Config;
use crate::data::{generate_synthetic, DataError, Sequence, SynthConfig};
use crate::eval::{evaluate, overall, EvalError, EvalResult};
use crate::loss::{jsd_mi, LossError};
use crate::model::{ArchitectureSpec, ModelError, ModelParams};
use crate::optim::Sgd;
use crate::tracker::{TrackError, Tracker, TrackerConfig};
use crate::trainer::{train, TrainError, TrainOutputs, TrainSummary};

/// Test sequences are seeded this far above the training ones.
pub const TEST_SEED_OFFSET: u64 = 4000;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{sequence}: {source}")]
    Track {
        sequence: String,
        #[source]
        source: TrackError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Sizes and seeds of the synthetic train/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub train_length: usize,
    pub test_length: usize,
    pub data_seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { train_sequences: 20, test_sequences: 5, train_length: 60, test_length: 100, data_seed: 1000 }
    }
}

/// Disjointly seeded training and held-out sequences. `synth` supplies
/// everything except seed and length.
pub fn benchmark_sets(bench: &BenchConfig, synth: &SynthConfig) -> Result<(Vec<Sequence>, Vec<Sequence>), DataError> {
    let make = |base: u64, n: usize, length: usize| {
        (0..n as u64)
            .map(|i| generate_synthetic(&SynthConfig { seed: base + i, length, ..synth.clone() }))
            .collect::<Result<Vec<_>, _>>()
    };
    Ok((
        make(bench.data_seed, bench.train_sequences, bench.train_length)?,
        make(bench.data_seed + TEST_SEED_OFFSET, bench.test_sequences, bench.test_length)?,
    ))
}

/// One-pass tracking and metrics for every sequence, in input order.
pub fn track_and_evaluate(
    spec: &ArchitectureSpec,
    params: &ModelParams,
    config: &TrackerConfig,
    sequences: &[Sequence],
) -> Result<Vec<EvalResult>, BenchError> {
    let tracker = Tracker::new(spec, params, config.clone())
        .map_err(|source| BenchError::Track { sequence: String::new(), source })?;
    sequences
        .iter()
        .map(|s| {
            let mut frames = s.clone();
            let r = tracker
                .track_sequence(&mut frames, &s.boxes[0])
                .map_err(|source| BenchError::Track { sequence: s.name.clone(), source })?;
            Ok(evaluate(&s.name, &r.boxes, &s.boxes, Some(&r.times))?)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub summary: TrainSummary,
    pub results: Vec<EvalResult>,
    pub overall: EvalResult,
    pub train_secs: f64,
    pub eval_secs: f64,
}

/// Generates the split, trains on it and evaluates on the held-out part.
pub fn run_benchmark(config: &Config, outputs: Option<&TrainOutputs>) -> Result<BenchReport, BenchError> {
    let start = Instant::now();
    let (train_set, test_set) = benchmark_sets(&config.bench, &config.synth)?;
    let summary = train(&config.train, &train_set, outputs, None)?;
    let train_secs = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let spec = config.train.spec()?;
    let results = track_and_evaluate(&spec, &summary.params, &config.tracker, &test_set)?;
    let overall = overall(&results)?;
    Ok(BenchReport { summary, results, overall, train_secs, eval_secs: start.elapsed().as_secs_f64() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub mu: f64,
    pub params: usize,
    /// `params` over the unpruned count of the same architecture.
    pub param_ratio: f64,
    pub precision20: f64,
    pub auc: f64,
}

pub const SWEEP_HEADER: &str = "mu,params,param_ratio,precision20,auc";

/// Trains and evaluates once per pruning ratio on a shared split.
pub fn mu_sweep(config: &Config, mus: &[f64]) -> Result<Vec<SweepRow>, BenchError> {
    let (train_set, test_set) = benchmark_sets(&config.bench, &config.synth)?;
    let spec = config.train.spec()?;
    let full = spec.param_count(0.0);
    mus.iter()
        .map(|&mu| {
            let mut train_cfg = config.train.clone();
            train_cfg.mu = mu;
            let summary = train(&train_cfg, &train_set, None, None)?;
            let all = overall(&track_and_evaluate(&spec, &summary.params, &config.tracker, &test_set)?)?;
            let params = summary.params.param_count();
            log::info!("mu {mu}: {params} parameters, precision20 {:.3}", all.precision20);
            Ok(SweepRow {
                mu,
                params,
                param_ratio: params as f64 / full as f64,
                precision20: all.precision20,
                auc: all.auc,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6},{:.6},{:.6}", r.mu, r.params, r.param_ratio, r.precision20, r.auc);
    }
    s
}

/// Settings of the critic trained on correlated Gaussian pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticConfig {
    pub hidden: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Pairs used for the final estimate.
    pub eval_samples: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self { hidden: 32, batch: 256, steps: 300, lr: 0.05, momentum: 0.9, eval_samples: 4096 }
    }
}

/// `[2,1,n]` tensor of pairs `(x, r x + sqrt(1-r²) e)`.
fn gaussian_pairs(r: f64, n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut data = vec![0.0; 2 * n];
    let s = (1.0 - r * r).sqrt();
    for i in 0..n {
        let x: f64 = StandardNormal.sample(rng);
        let e: f64 = StandardNormal.sample(rng);
        data[i] = x;
        data[n + i] = r * x + s * e;
    }
    Tensor::new(vec![2, 1, n], data).expect("pair layout")
}

/// Same `x`, with `y` cyclically shifted by one sample.
fn shuffled_pairs(joint: &Tensor) -> Tensor {
    let n = joint.shape()[2];
    let d = joint.data();
    let mut data = d[..n].to_vec();
    data.extend((0..n).map(|i| d[n + (i + 1) % n]));
    Tensor::new(vec![2, 1, n], data).expect("pair layout")
}

const CRITIC_LAYERS: [&str; 3] = ["c0", "c1", "c2"];

fn critic_params(hidden: usize, rng: &mut ChaCha8Rng) -> BTreeMap<String, Tensor> {
    let dims = [(2, hidden), (hidden, hidden), (hidden, 1)];
    let mut p = BTreeMap::new();
    for (name, (cin, cout)) in CRITIC_LAYERS.iter().zip(dims) {
        let std = (2.0 / cin as f64).sqrt();
        p.insert(format!("{name}.weight"), Tensor::randn(&[cout, cin, 1, 1], std, rng));
        p.insert(format!("{name}.bias"), Tensor::zeros(&[cout]));
    }
    p
}

/// Per-pair scores of a pointwise MLP.
fn critic_scores(g: &mut Graph, vars: &BTreeMap<String, Var>, pairs: Var) -> Result<Var, TensorError> {
    let mut h = pairs;
    for (i, name) in CRITIC_LAYERS.iter().enumerate() {
        h = g.conv2d(h, vars[&format!("{name}.weight")], vars[&format!("{name}.bias")], 1, 0)?;
        if i + 1 < CRITIC_LAYERS.len() {
            h = g.relu(h)?;
        }
    }
    Ok(h)
}

fn critic_mi(
    g: &mut Graph,
    params: &BTreeMap<String, Tensor>,
    joint: &Tensor,
    trainable: bool,
) -> Result<(Var, BTreeMap<String, Var>), BenchError> {
    let vars: BTreeMap<String, Var> = params.iter().map(|(k, t)| (k.clone(), g.leaf(t.clone(), trainable))).collect();
    let j = g.constant(joint.clone());
    let m = g.constant(shuffled_pairs(joint));
    let sj = critic_scores(g, &vars, j)?;
    let sm = critic_scores(g, &vars, m)?;
    Ok((jsd_mi(g, sj, sm)?, vars))
}

/// Trains a fresh critic on pairs with correlation `r` and returns its
/// Jensen-Shannon estimate on held-out pairs.
pub fn gaussian_critic_estimate(r: f64, seed: u64, cfg: &CriticConfig) -> Result<f64, BenchError> {
    crate::loss::exact_mi_gaussian(r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = critic_params(cfg.hidden, &mut rng);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, 0.0);
    for _ in 0..cfg.steps {
        let joint = gaussian_pairs(r, cfg.batch, &mut rng);
        let mut g = Graph::new();
        let (mi, vars) = critic_mi(&mut g, &params, &joint, true)?;
        let loss = g.neg(mi);
        g.backward(loss)?;
        let grads = vars
            .iter()
            .map(|(k, &v)| (k.clone(), g.grad_data(v).expect("critic weights require grad").to_vec()))
            .collect();
        opt.step(&mut params, &grads);
    }
    let held_out = gaussian_pairs(r, cfg.eval_samples, &mut rng);
    let mut g = Graph::new();
    let (mi, _) = critic_mi(&mut g, &params, &held_out, false)?;
    Ok(g.item(mi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_keeps_x_and_rotates_y() {
        let t = Tensor::new(vec![2, 1, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(shuffled_pairs(&t).data(), &[1.0, 2.0, 3.0, 5.0, 6.0, 4.0]);
    }

    #[test]
    fn splits_are_disjoint_and_sized() {
        let bench =
            BenchConfig { train_sequences: 2, test_sequences: 1, train_length: 3, test_length: 4, data_seed: 7 };
        let (tr, te) = benchmark_sets(&bench, &SynthConfig::default()).unwrap();
        assert_eq!((tr.len(), te.len()), (2, 1));
        assert_eq!(tr[0].len(), 3);
        assert_eq!(te[0].len(), 4);
        assert!(tr.iter().all(|s| s.name != te[0].name));
    }

    #[test]
    fn sweep_csv_layout() {
        let rows = [SweepRow { mu: 0.5, params: 10, param_ratio: 0.25, precision20: 1.0, auc: 0.5 }];
        assert_eq!(sweep_csv(&rows), "mu,params,param_ratio,precision20,auc\n0.5,10,0.250000,1.000000,0.500000\n");
    }
}
