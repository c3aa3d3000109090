use std::collections::BTreeMap;

use drmim::bench::{benchmark_sets, BenchConfig};
use drmim::data::Sequence;
use drmim::loss::{LossWeights, ScoreGrid};
use drmim::model::{build_model, ArchConfig, PruneConfig};
use drmim::optim::Sgd;
use drmim::trainer::{
    clip_grad_norm, loss_gradients, sample_batch, train, train_step, TrainConfig, TrainError, TrainLogRecord,
    TrainOutputs, LOG_HEADER,
};

fn small_config() -> TrainConfig {
    let arch = ArchConfig { search_size: 176, ..ArchConfig::default() };
    let mut c = TrainConfig { batch: 2, steps: 3, arch, ..TrainConfig::default() };
    c.sampler.search_size = 176;
    c
}

fn dataset() -> Vec<Sequence> {
    let bench = BenchConfig { train_sequences: 2, train_length: 20, test_sequences: 0, ..BenchConfig::default() };
    benchmark_sets(&bench, &Default::default()).unwrap().0
}

type Grads = BTreeMap<String, Vec<f64>>;

fn grads_with(cfg: &TrainConfig, data: &[Sequence], w: LossWeights) -> (TrainLogRecord, Grads) {
    let spec = cfg.spec().unwrap();
    let grid = ScoreGrid::from_spec(&spec).unwrap();
    let params = build_model(&spec, PruneConfig::new(cfg.mu).unwrap(), 7).unwrap();
    let (batch, _) = sample_batch(cfg, &grid, data, 1).unwrap();
    loss_gradients(&spec, &params, &batch, &w).unwrap()
}

fn norm_of(g: &Grads, prefix: &str) -> f64 {
    g.iter().filter(|(n, _)| n.starts_with(prefix)).flat_map(|(_, v)| v).map(|x| x * x).sum::<f64>().sqrt()
}

fn diff(a: &Grads, b: &Grads) -> Grads {
    a.iter().map(|(n, v)| (n.clone(), v.iter().zip(&b[n]).map(|(x, y)| x - y).collect())).collect()
}

#[test]
fn every_term_reaches_its_parameters() {
    let cfg = small_config();
    let data = dataset();
    let base = LossWeights { rho: 0.0, gamma: 0.0, omega: 0.0, ..LossWeights::default() };
    let (_, g0) = grads_with(&cfg, &data, base);
    let (_, gr) = grads_with(&cfg, &data, LossWeights { rho: 0.05, ..base });
    let (_, gl) = grads_with(&cfg, &data, LossWeights { gamma: 0.05, ..base });
    let (_, gi) = grads_with(&cfg, &data, LossWeights { omega: 0.05, ..base });
    let (_, all) = grads_with(&cfg, &data, LossWeights::default());

    // Tracking loss alone touches neither the discriminators nor the unrelated branch.
    for p in ["disc_global", "disc_local", "dr_unrelated"] {
        assert_eq!(norm_of(&g0, p), 0.0, "{p}");
    }
    for p in ["backbone", "dr_related", "head_cls", "head_reg", "head_quality"] {
        assert!(norm_of(&g0, p) > 0.0, "{p}");
    }
    let (dr, dl, di) = (diff(&gr, &g0), diff(&gl, &g0), diff(&gi, &g0));
    assert!(norm_of(&dr, "disc_global") > 0.0 && norm_of(&dr, "dr_unrelated") > 0.0);
    assert_eq!(norm_of(&dr, "disc_local"), 0.0);
    assert!(norm_of(&dl, "disc_local") > 0.0 && norm_of(&dl, "dr_unrelated") > 0.0);
    assert_eq!(norm_of(&dl, "disc_global"), 0.0);
    assert!(norm_of(&di, "dr_related") > 0.0 && norm_of(&di, "backbone") > 0.0);
    assert_eq!(norm_of(&di, "dr_unrelated") + norm_of(&di, "disc_"), 0.0);

    // The total gradient is the sum of its parts.
    for (name, v) in &all {
        for (k, &x) in v.iter().enumerate() {
            let want = g0[name][k] + dr[name][k] + dl[name][k] + di[name][k];
            assert!((x - want).abs() <= 1e-9 * (1.0 + x.abs()), "{name}[{k}]: {x} vs {want}");
        }
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let cfg = small_config();
    let spec = cfg.spec().unwrap();
    let grid = ScoreGrid::from_spec(&spec).unwrap();
    let mut params = build_model(&spec, PruneConfig::new(0.5).unwrap(), 1).unwrap();
    let before = params.tensors.clone();
    let mut opt = Sgd::new(0.0, 0.9, 1e-4);
    let data = dataset();
    for step in 1..=2 {
        let (batch, _) = sample_batch(&cfg, &grid, &data, step).unwrap();
        train_step(&spec, &mut params, &mut opt, &batch, &cfg.weights, 10.0, step).unwrap();
    }
    assert_eq!(params.tensors, before);
    assert_eq!(params.meta.step, 2);
}

#[test]
fn a_fixed_batch_is_fitted() {
    let cfg = small_config();
    let spec = cfg.spec().unwrap();
    let grid = ScoreGrid::from_spec(&spec).unwrap();
    let mut params = build_model(&spec, PruneConfig::new(0.5).unwrap(), 2).unwrap();
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let (batch, _) = sample_batch(&cfg, &grid, &dataset(), 1).unwrap();
    let mut first = None;
    let mut last = 0.0;
    for step in 1..=200 {
        let rec = train_step(&spec, &mut params, &mut opt, &batch, &cfg.weights, cfg.grad_clip, step).unwrap();
        first.get_or_insert(rec.total);
        last = rec.total;
    }
    let first = first.unwrap();
    assert!(last <= 0.5 * first, "total {first} -> {last}");
}

#[test]
fn batch_sampling_is_deterministic_and_positive() {
    let cfg = small_config();
    let spec = cfg.spec().unwrap();
    let grid = ScoreGrid::from_spec(&spec).unwrap();
    let data = dataset();
    let (a, _) = sample_batch(&cfg, &grid, &data, 5).unwrap();
    let (b, _) = sample_batch(&cfg, &grid, &data, 5).unwrap();
    let (c, _) = sample_batch(&cfg, &grid, &data, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.iter().all(|t| drmim::loss::assign_targets(&grid, &t.gt).n_pos > 0));
}

#[test]
fn clipping_caps_the_joint_norm() {
    let mut g: Grads = BTreeMap::new();
    g.insert("a".into(), vec![3.0, 0.0]);
    g.insert("b".into(), vec![4.0]);
    assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
    assert!((g["a"][0] - 0.6).abs() < 1e-15 && (g["b"][0] - 0.8).abs() < 1e-15);
    let mut h = g.clone();
    clip_grad_norm(&mut h, 0.0);
    assert_eq!(h, g);
}

#[test]
fn log_and_resume() {
    let mut cfg = small_config();
    let data = dataset();
    let dir = tempfile::tempdir().unwrap();
    let out = TrainOutputs { checkpoint: dir.path().join("m.ckpt"), log: dir.path().join("log.csv") };
    let first = train(&cfg, &data, Some(&out), None).unwrap();
    assert_eq!(first.records.len(), 3);
    for r in &first.records {
        assert!(r.identity_residual(&cfg.weights) <= 1e-9);
    }
    let text = std::fs::read_to_string(&out.log).unwrap();
    assert_eq!(text.lines().next(), Some(LOG_HEADER));
    assert_eq!(text.lines().count(), 1 + 3);

    cfg.steps = 5;
    let resumed = drmim::model::load_checkpoint(&out.checkpoint, &cfg.spec().unwrap()).unwrap();
    let second = train(&cfg, &data, Some(&out), Some(resumed)).unwrap();
    assert_eq!(second.records.iter().map(|r| r.step).collect::<Vec<_>>(), vec![4, 5]);
    assert_eq!(std::fs::read_to_string(&out.log).unwrap().lines().count(), 1 + 5);
    assert_eq!(second.params.meta.step, 5);
}

#[test]
fn bad_configs_are_rejected() {
    let data = dataset();
    let one = TrainConfig { batch: 1, ..small_config() };
    assert!(matches!(train(&one, &data, None, None), Err(TrainError::Config(_))));
    let none = TrainConfig { steps: 0, ..small_config() };
    assert!(matches!(train(&none, &data, None, None), Err(TrainError::Config(_))));
    assert!(matches!(train(&small_config(), &[], None, None), Err(TrainError::Config(_))));
}

#[test]
fn divergence_is_reported() {
    let cfg = small_config();
    let spec = cfg.spec().unwrap();
    let grid = ScoreGrid::from_spec(&spec).unwrap();
    let mut params = build_model(&spec, PruneConfig::new(0.5).unwrap(), 1).unwrap();
    for t in params.tensors.values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = f64::NAN);
    }
    let (batch, _) = sample_batch(&cfg, &grid, &dataset(), 1).unwrap();
    let mut opt = Sgd::new(0.01, 0.9, 0.0);
    let err = train_step(&spec, &mut params, &mut opt, &batch, &cfg.weights, 10.0, 1).unwrap_err();
    // Caught either by a guarded primitive or by the finite-loss check.
    assert!(matches!(err, TrainError::NonFinite(_) | TrainError::Loss(_)), "{err}");
    assert_eq!(params.meta.step, 0);
}
