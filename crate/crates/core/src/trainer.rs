//! Joint SGD training of the network and its MI discriminators.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::data::{sample_tuple, DataError, SamplerConfig, Sequence, TrainingTuple};
use crate::loss::{assign_targets, cr_loss, idsim_loss, mi_loss, total_loss, LossError, LossWeights, ScoreGrid};
use crate::model::{
    build_model, save_checkpoint, ArchConfig, ArchitectureSpec, ModelError, ModelParams, Network, PruneConfig, Task,
};
use crate::optim::Sgd;

pub const LOG_HEADER: &str = "step,total,cr,mi_global,mi_local,idsim,n_pos,ms";

/// Attempts at drawing a tuple with at least one positive cell.
const MAX_RESAMPLE: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite loss at step {}: {}", .0.step, .0.csv_row())]
    NonFinite(TrainLogRecord),
    #[error("step {step}: i/o error on {path}: {source}")]
    Io {
        step: u64,
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("step {step}: {source}")]
    Checkpoint {
        step: u64,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl From<crate::autodiff::TensorError> for TrainError {
    fn from(e: crate::autodiff::TensorError) -> Self {
        TrainError::Loss(e.into())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub steps: u64,
    pub seed: u64,
    pub weights: LossWeights,
    pub mu: f64,
    pub arch: ArchConfig,
    pub sampler: SamplerConfig,
    /// Rescale the joint gradient to at most this L2 norm; 0 disables.
    pub grad_clip: f64,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch: 8,
            steps: 1200,
            seed: 0,
            weights: LossWeights::default(),
            mu: 0.5,
            arch: ArchConfig::default(),
            sampler: SamplerConfig::default(),
            grad_clip: 10.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch < 2 {
            return Err(TrainError::Config(format!("batch must be at least 2 for MI negatives, got {}", self.batch)));
        }
        if self.steps == 0 {
            return Err(TrainError::Config("steps must be at least 1".into()));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TrainError::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.sampler.template_size != self.arch.template_size || self.sampler.search_size != self.arch.search_size {
            return Err(TrainError::Config("sampler crop sizes differ from the architecture".into()));
        }
        self.weights.validate()?;
        PruneConfig::new(self.mu)?;
        Ok(())
    }

    pub fn spec(&self) -> Result<ArchitectureSpec, TrainError> {
        Ok(ArchitectureSpec::from_config(&self.arch)?)
    }
}

/// Loss components of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLogRecord {
    pub step: u64,
    pub total: f64,
    pub cr: f64,
    pub mi_global: f64,
    pub mi_local: f64,
    pub idsim: f64,
    pub n_pos: usize,
    pub ms: f64,
}

impl TrainLogRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step, self.total, self.cr, self.mi_global, self.mi_local, self.idsim, self.n_pos, self.ms
        )
    }

    /// `|total - (cr - (rho*global + gamma*local) + idsim)|`.
    pub fn identity_residual(&self, w: &LossWeights) -> f64 {
        (self.total - (self.cr - (w.rho * self.mi_global + w.gamma * self.mi_local) + self.idsim)).abs()
    }
}

fn mean_of(g: &mut Graph, parts: &[Var]) -> Result<Var, TrainError> {
    let flat = parts.iter().map(|&p| g.flatten(p)).collect::<Result<Vec<_>, _>>()?;
    let all = g.concat(&flat)?;
    Ok(g.mean(all))
}

/// Per-sample forward of a batch; returns the loss graph and its parts.
struct BatchLoss {
    graph: Graph,
    names: Vec<(String, Var)>,
    record: TrainLogRecord,
    total: Var,
}

fn batch_loss(
    spec: &ArchitectureSpec,
    params: &ModelParams,
    batch: &[TrainingTuple],
    weights: &LossWeights,
) -> Result<BatchLoss, TrainError> {
    let grid = ScoreGrid::from_spec(spec)?;
    let mut g = Graph::new();
    let net = Network::bind(&mut g, spec, params, true)?;
    let (mut fs, mut fts, mut crs, mut ids) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut n_pos = 0;
    for t in batch {
        let z = g.constant(t.z.clone());
        let x = g.constant(t.x.clone());
        let zp = g.constant(t.z_prime.clone());
        let fz = net.backbone_forward(&mut g, z)?;
        let (f_u, f_r) = net.dr_split(&mut g, fz)?;
        let f_tilde = g.concat_channels(&[f_r, f_u])?;
        let fx = net.backbone_forward(&mut g, x)?;
        let rx = net.related(&mut g, fx)?;
        let cls = net.couple(&mut g, f_r, rx, Task::Cls)?;
        let reg = net.couple(&mut g, f_r, rx, Task::Reg)?;
        let head = net.head_forward(&mut g, cls, reg)?;
        let targets = assign_targets(&grid, &t.gt);
        n_pos += targets.n_pos;
        crs.push(cr_loss(&mut g, &head, &targets, weights)?.loss);
        let fzp = net.backbone_forward(&mut g, zp)?;
        let rzp = net.related(&mut g, fzp)?;
        ids.push(idsim_loss(&mut g, f_r, rzp, weights.omega)?);
        fs.push(fz);
        fts.push(f_tilde);
    }
    let cr = mean_of(&mut g, &crs)?;
    let idsim = mean_of(&mut g, &ids)?;
    let mi = mi_loss(&mut g, &fs, &fts, &net, weights)?;
    let total = total_loss(&mut g, cr, mi.objective, idsim)?;
    let record = TrainLogRecord {
        step: 0,
        total: g.item(total),
        cr: g.item(cr),
        mi_global: g.item(mi.global),
        mi_local: g.item(mi.local),
        idsim: g.item(idsim),
        n_pos,
        ms: 0.0,
    };
    let names = net.params().map(|(n, v)| (n.to_string(), v)).collect();
    Ok(BatchLoss { graph: g, names, record, total })
}

/// Gradients of the total loss by parameter name, without updating.
pub fn loss_gradients(
    spec: &ArchitectureSpec,
    params: &ModelParams,
    batch: &[TrainingTuple],
    weights: &LossWeights,
) -> Result<(TrainLogRecord, BTreeMap<String, Vec<f64>>), TrainError> {
    let mut b = batch_loss(spec, params, batch, weights)?;
    b.graph.backward(b.total)?;
    let grads = b
        .names
        .iter()
        .map(|(n, v)| (n.clone(), b.graph.grad_data(*v).expect("parameter requires grad").to_vec()))
        .collect();
    Ok((b.record, grads))
}

/// Scales all gradients by a common factor so their joint L2 norm is at
/// most `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let norm = grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        grads.values_mut().flatten().for_each(|g| *g *= k);
    }
    norm
}

/// One SGD update of every parameter on `batch`.
pub fn train_step(
    spec: &ArchitectureSpec,
    params: &mut ModelParams,
    opt: &mut Sgd,
    batch: &[TrainingTuple],
    weights: &LossWeights,
    grad_clip: f64,
    step: u64,
) -> Result<TrainLogRecord, TrainError> {
    if batch.len() < 2 {
        return Err(TrainError::Config(format!("batch of {} cannot provide MI negatives", batch.len())));
    }
    let start = Instant::now();
    let mut b = batch_loss(spec, params, batch, weights)?;
    b.record.step = step;
    if !b.record.total.is_finite() {
        b.record.ms = start.elapsed().as_secs_f64() * 1e3;
        return Err(TrainError::NonFinite(b.record));
    }
    b.graph.backward(b.total)?;
    let mut grads: BTreeMap<String, Vec<f64>> = b
        .names
        .iter()
        .map(|(n, v)| (n.clone(), b.graph.grad_data(*v).expect("parameter requires grad").to_vec()))
        .collect();
    drop(b.graph);
    clip_grad_norm(&mut grads, grad_clip);
    opt.step(&mut params.tensors, &grads);
    params.meta.step = step;
    b.record.ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(b.record)
}

/// Draws the batch for `step`: deterministic in `(seed, step)`. Tuples
/// whose target has no positive cell are redrawn.
pub fn sample_batch(
    config: &TrainConfig,
    grid: &ScoreGrid,
    dataset: &[Sequence],
    step: u64,
) -> Result<(Vec<TrainingTuple>, usize), TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::Config("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(step);
    let mut batch = Vec::with_capacity(config.batch);
    let mut skipped = 0;
    while batch.len() < config.batch {
        let mut attempts = 0;
        loop {
            let seq = &dataset[rng.random_range(0..dataset.len())];
            let t = sample_tuple(seq, &config.sampler, &mut rng);
            if assign_targets(grid, &t.gt).n_pos > 0 {
                batch.push(t);
                break;
            }
            skipped += 1;
            attempts += 1;
            if attempts >= MAX_RESAMPLE {
                return Err(TrainError::Config(format!(
                    "no tuple with a positive cell after {MAX_RESAMPLE} draws at step {step}"
                )));
            }
        }
    }
    Ok((batch, skipped))
}

/// Where `train` writes its artifacts.
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub params: ModelParams,
    pub records: Vec<TrainLogRecord>,
    /// Tuples redrawn because their target had no positive cell.
    pub skipped: usize,
}

fn open_log(path: &Path, append: bool) -> Result<BufWriter<File>, TrainError> {
    let io = |source| TrainError::Io { step: 0, path: path.display().to_string(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let exists = path.exists();
    let file = if append { OpenOptions::new().create(true).append(true).open(path) } else { File::create(path) }
        .map_err(|source| TrainError::Io { step: 0, path: path.display().to_string(), source })?;
    let mut w = BufWriter::new(file);
    if !(append && exists) {
        writeln!(w, "{LOG_HEADER}").map_err(|source| TrainError::Io {
            step: 0,
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(w)
}

/// Trains from scratch, or continues from `resume` up to `config.steps`.
///
/// The optimizer state is not checkpointed, so a resumed run restarts
/// momentum from zero.
pub fn train(
    config: &TrainConfig,
    dataset: &[Sequence],
    outputs: Option<&TrainOutputs>,
    resume: Option<ModelParams>,
) -> Result<TrainSummary, TrainError> {
    config.validate()?;
    let spec = config.spec()?;
    let grid = ScoreGrid::from_spec(&spec)?;
    let resumed = resume.is_some();
    let mut params = match resume {
        Some(p) => {
            if p.meta.spec_hash != spec.hash() {
                return Err(ModelError::from(crate::model::CheckpointError::SpecHash).into());
            }
            p.validate_against(&spec)?;
            p
        }
        None => build_model(&spec, PruneConfig::new(config.mu)?, config.seed)?,
    };
    let mut opt = Sgd::new(config.lr, config.momentum, config.weight_decay);
    let mut log = outputs.map(|o| open_log(&o.log, resumed)).transpose()?;
    let mut records = Vec::new();
    let mut skipped = 0;
    let first = params.meta.step + 1;
    for step in first..=config.steps {
        let (batch, s) = sample_batch(config, &grid, dataset, step)?;
        if s > 0 {
            log::warn!("step {step}: redrew {s} tuples without positive cells");
        }
        skipped += s;
        let rec = train_step(&spec, &mut params, &mut opt, &batch, &config.weights, config.grad_clip, step)?;
        log::debug!("{}", rec.csv_row());
        if let (Some(w), Some(o)) = (log.as_mut(), outputs) {
            writeln!(w, "{}", rec.csv_row()).map_err(|source| TrainError::Io {
                step,
                path: o.log.display().to_string(),
                source,
            })?;
        }
        records.push(rec);
        if let Some(o) = outputs {
            let periodic = config.checkpoint_every > 0 && step % config.checkpoint_every == 0;
            if periodic || step == config.steps {
                save_checkpoint(&params, &o.checkpoint).map_err(|source| TrainError::Checkpoint { step, source })?;
            }
        }
    }
    if let (Some(mut w), Some(o)) = (log, outputs) {
        w.flush().map_err(|source| TrainError::Io { step: config.steps, path: o.log.display().to_string(), source })?;
    }
    Ok(TrainSummary { params, records, skipped })
}
