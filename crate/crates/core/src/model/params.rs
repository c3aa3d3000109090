use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::{ArchitectureSpec, LayerSpec};
use super::{CheckpointError, ModelError};
use crate::autodiff::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"DRMIM1";
pub const CHECKPOINT_VERSION: u8 = 1;

const META_MU: &str = "meta.mu";
const META_SEED: &str = "meta.seed";
const META_STEP: &str = "meta.step";

/// Global pruning ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneConfig {
    mu: f64,
}

impl PruneConfig {
    pub const MAX_MU: f64 = 0.9;

    pub fn new(mu: f64) -> Result<Self, ModelError> {
        if !(0.0..=Self::MAX_MU).contains(&mu) {
            return Err(ModelError::Config(format!("pruning ratio {mu} outside [0, {}]", Self::MAX_MU)));
        }
        Ok(Self { mu })
    }

    pub fn none() -> Self {
        Self { mu: 0.0 }
    }

    pub fn mu(self) -> f64 {
        self.mu
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamsMeta {
    pub spec_hash: [u8; 32],
    pub mu: f64,
    pub seed: u64,
    /// Optimizer steps taken to reach these weights.
    pub step: u64,
}

/// Named weight and bias tensors of every layer, plus build metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub tensors: BTreeMap<String, Tensor>,
    pub meta: ParamsMeta,
}

/// Prior probability for the classification bias, so focal training
/// starts from mostly-negative predictions.
const CLS_PRIOR: f64 = 0.01;

fn init_layer(layer: &LayerSpec, mu: f64, rng: &mut ChaCha8Rng, out: &mut BTreeMap<String, Tensor>) {
    let shape = layer.weight_shape(mu);
    let fan_in = layer.fan_in(mu) as f64;
    // He fan-in scaling; the three prediction layers and the score
    // outputs start ten times smaller.
    let small = layer.name.ends_with(".out") || layer.out.base() == 1;
    let gain = if layer.relu { 2.0 } else { 1.0 };
    let std = (gain / fan_in).sqrt() * if small { 0.1 } else { 1.0 };
    out.insert(format!("{}.weight", layer.name), Tensor::randn(&shape, std, rng));
    let mut bias = Tensor::zeros(&[layer.out_channels(mu)]);
    if layer.name == "head_cls.out" {
        bias.data_mut().fill(-((1.0 - CLS_PRIOR) / CLS_PRIOR).ln());
    }
    out.insert(format!("{}.bias", layer.name), bias);
}

/// Allocates pruned, seeded parameters for `spec`.
pub fn build_model(spec: &ArchitectureSpec, prune: PruneConfig, seed: u64) -> Result<ModelParams, ModelError> {
    spec.validate()?;
    let mu = prune.mu();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for layer in spec.layers() {
        init_layer(layer, mu, &mut rng, &mut tensors);
    }
    Ok(ModelParams { tensors, meta: ParamsMeta { spec_hash: spec.hash(), mu, seed, step: 0 } })
}

impl ModelParams {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Checks that every layer of `spec` has exactly one weight and bias of
    /// the pruned shape, and nothing else is present.
    pub fn validate_against(&self, spec: &ArchitectureSpec) -> Result<(), ModelError> {
        let mu = self.meta.mu;
        let mut expected = BTreeMap::new();
        for l in spec.layers() {
            expected.insert(format!("{}.weight", l.name), l.weight_shape(mu));
            expected.insert(format!("{}.bias", l.name), vec![l.out_channels(mu)]);
        }
        for (name, shape) in &expected {
            match self.tensors.get(name) {
                None => return Err(CheckpointError::Shape(format!("missing tensor {name}")).into()),
                Some(t) if t.shape() != &shape[..] => {
                    return Err(
                        CheckpointError::Shape(format!("{name}: expected {shape:?}, found {:?}", t.shape())).into()
                    )
                }
                _ => {}
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !expected.contains_key(*k)) {
            return Err(CheckpointError::Shape(format!("unexpected tensor {extra}")).into());
        }
        Ok(())
    }

    /// Serialises to the checkpoint byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.push(CHECKPOINT_VERSION);
        buf.extend_from_slice(&self.meta.spec_hash);
        let meta = [
            (META_MU, Tensor::scalar(self.meta.mu)),
            (META_SEED, Tensor::scalar(f64::from_bits(self.meta.seed))),
            (META_STEP, Tensor::scalar(f64::from_bits(self.meta.step))),
        ];
        let records = meta.iter().map(|(n, t)| (*n, t)).chain(self.tensors.iter().map(|(n, t)| (n.as_str(), t)));
        for (name, t) in records {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    /// Parses checkpoint bytes without checking them against a spec.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(6)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::Version(format!("bad magic {:?}", String::from_utf8_lossy(magic))));
        }
        let version = r.take(1)?[0];
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(format!("unsupported format version {version}")));
        }
        let spec_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let mut tensors = BTreeMap::new();
        let (mut mu, mut seed, mut step) = (None, None, None);
        while r.pos < bytes.len() {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            if rank == 0 || rank > 8 {
                return Err(CheckpointError::Corrupt(format!("{name}: rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel.filter(|&n| n > 0 && n <= (bytes.len() - r.pos) / 8).ok_or(CheckpointError::Truncated)?;
            let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            match name.as_str() {
                META_MU => mu = Some(t.item()),
                META_SEED => seed = Some(t.item().to_bits()),
                META_STEP => step = Some(t.item().to_bits()),
                _ => {
                    if tensors.insert(name.clone(), t).is_some() {
                        return Err(CheckpointError::Corrupt(format!("duplicate tensor {name}")));
                    }
                }
            }
        }
        let (Some(mu), Some(seed), Some(step)) = (mu, seed, step) else {
            return Err(CheckpointError::Corrupt("missing metadata records".into()));
        };
        Ok(Self { tensors, meta: ParamsMeta { spec_hash, mu, seed, step } })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), ModelError> {
    let mut f = fs::File::create(path).map_err(|e| ModelError::Io(path.display().to_string(), e))?;
    f.write_all(&params.to_bytes()).map_err(|e| ModelError::Io(path.display().to_string(), e))
}

/// Reads a checkpoint and validates it against `spec`.
pub fn load_checkpoint(path: &Path, spec: &ArchitectureSpec) -> Result<ModelParams, ModelError> {
    let bytes = fs::read(path).map_err(|e| ModelError::Io(path.display().to_string(), e))?;
    let params = ModelParams::from_bytes(&bytes)?;
    if params.meta.spec_hash != spec.hash() {
        return Err(CheckpointError::SpecHash.into());
    }
    PruneConfig::new(params.meta.mu)?;
    params.validate_against(spec)?;
    Ok(params)
}
