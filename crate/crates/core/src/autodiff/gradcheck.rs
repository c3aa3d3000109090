//! Finite-difference verification of analytic gradients.
//!
//! Each differentiable operation is wrapped in a [`GradCase`] and
//! registered by name in a [`GradCheckRegistry`]. The checker builds the
//! case on random inputs, reduces its output with fixed random weights,
//! and compares every input gradient against central differences.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, TensorError, Var};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so gradients near zero are
/// compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-3;

pub trait GradCase: Send + Sync {
    fn name(&self) -> &str;

    /// Random inputs for one instance; all of them are differentiated.
    fn inputs(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor>;

    fn forward(&self, g: &mut Graph, inputs: &[Var]) -> Result<Var, TensorError>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub instances: usize,
    pub max_rel_err: f64,
}

impl GradReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn reduced_loss(
    case: &dyn GradCase,
    inputs: &[Tensor],
    weights: &mut Option<Tensor>,
    rng: &mut ChaCha8Rng,
    grads: bool,
) -> Result<(f64, Vec<Vec<f64>>), TensorError> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = case.forward(&mut g, &vars)?;
    let w = weights.get_or_insert_with(|| Tensor::uniform(g.shape(out), -1.0, 1.0, rng)).clone();
    let wv = g.constant(w);
    let prod = g.mul(out, wv)?;
    let loss = g.sum(prod);
    let value = g.item(loss);
    if !grads {
        return Ok((value, Vec::new()));
    }
    g.backward(loss)?;
    let gs = vars.iter().map(|&v| g.grad_data(v).map(<[f64]>::to_vec).unwrap_or_default()).collect();
    Ok((value, gs))
}

/// Runs one case over `instances` seeds and returns the worst relative error.
pub fn check_case(case: &dyn GradCase, seed: u64, instances: usize) -> Result<GradReport, TensorError> {
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let inputs = case.inputs(&mut rng);
        let mut weights = None;
        let (_, analytic) = reduced_loss(case, &inputs, &mut weights, &mut rng, true)?;
        for (ti, grad) in analytic.iter().enumerate() {
            for (j, &a) in grad.iter().enumerate() {
                let mut plus = inputs.clone();
                plus[ti].data_mut()[j] += FD_STEP;
                let mut minus = inputs.clone();
                minus[ti].data_mut()[j] -= FD_STEP;
                let (lp, _) = reduced_loss(case, &plus, &mut weights, &mut rng, false)?;
                let (lm, _) = reduced_loss(case, &minus, &mut weights, &mut rng, false)?;
                let numeric = (lp - lm) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(a, numeric));
            }
        }
    }
    Ok(GradReport { name: case.name().to_string(), instances, max_rel_err: worst })
}

/// Named collection of gradient cases.
#[derive(Default)]
pub struct GradCheckRegistry {
    cases: BTreeMap<String, Box<dyn GradCase>>,
}

impl GradCheckRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry preloaded with every primitive operation of [`Graph`].
    pub fn with_primitives() -> Self {
        let mut r = Self::new();
        for case in primitive_cases() {
            r.register(case);
        }
        r
    }

    pub fn register(&mut self, case: Box<dyn GradCase>) {
        self.cases.insert(case.name().to_string(), case);
    }

    pub fn get(&self, name: &str) -> Option<&dyn GradCase> {
        self.cases.get(name).map(|c| c.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.cases.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn GradCase> {
        self.cases.values().map(|c| c.as_ref())
    }
}

type InputFn = fn(&mut ChaCha8Rng) -> Vec<Tensor>;
type ForwardFn = fn(&mut Graph, &[Var]) -> Result<Var, TensorError>;

/// A case assembled from two plain functions.
pub struct FnCase {
    name: &'static str,
    inputs: InputFn,
    forward: ForwardFn,
}

impl FnCase {
    pub fn boxed(name: &'static str, inputs: InputFn, forward: ForwardFn) -> Box<dyn GradCase> {
        Box::new(Self { name, inputs, forward })
    }
}

impl GradCase for FnCase {
    fn name(&self) -> &str {
        self.name
    }

    fn inputs(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        (self.inputs)(rng)
    }

    fn forward(&self, g: &mut Graph, inputs: &[Var]) -> Result<Var, TensorError> {
        (self.forward)(g, inputs)
    }
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

/// Values bounded away from zero, for kinks and poles.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = normal(shape, rng);
    for v in t.data_mut() {
        *v = v.signum() * (v.abs() + 0.05);
    }
    t
}

fn conv_inputs(rng: &mut ChaCha8Rng, cin: usize, cout: usize, hw: usize, k: usize) -> Vec<Tensor> {
    let h = hw + rng.random_range(0..2);
    vec![normal(&[cin, h, hw], rng), normal(&[cout, cin, k, k], rng), normal(&[cout], rng)]
}

fn primitive_cases() -> Vec<Box<dyn GradCase>> {
    vec![
        FnCase::boxed("conv2d", |r| conv_inputs(r, 2, 3, 5, 3), |g, v| g.conv2d(v[0], v[1], v[2], 1, 0)),
        FnCase::boxed("conv2d_stride2_pad1", |r| conv_inputs(r, 2, 2, 6, 3), |g, v| g.conv2d(v[0], v[1], v[2], 2, 1)),
        FnCase::boxed("conv2d_pointwise", |r| conv_inputs(r, 3, 2, 4, 1), |g, v| g.conv2d(v[0], v[1], v[2], 1, 0)),
        FnCase::boxed(
            "depthwise_xcorr",
            |r| vec![normal(&[2, 2, 3], r), normal(&[2, 5, 6], r)],
            |g, v| g.depthwise_xcorr(v[0], v[1]),
        ),
        FnCase::boxed("softplus", |r| vec![Tensor::randn(&[12], 4.0, r)], |g, v| g.softplus(v[0])),
        FnCase::boxed("relu", |r| vec![away_from_zero(&[12], r)], |g, v| g.relu(v[0])),
        FnCase::boxed("sigmoid", |r| vec![Tensor::randn(&[12], 3.0, r)], |g, v| g.sigmoid(v[0])),
        FnCase::boxed("exp", |r| vec![normal(&[12], r)], |g, v| g.exp(v[0])),
        FnCase::boxed("log", |r| vec![Tensor::uniform(&[12], 0.2, 3.0, r)], |g, v| g.log(v[0])),
        FnCase::boxed("add", |r| vec![normal(&[2, 3], r), normal(&[2, 3], r)], |g, v| g.add(v[0], v[1])),
        FnCase::boxed("sub", |r| vec![normal(&[2, 3], r), normal(&[2, 3], r)], |g, v| g.sub(v[0], v[1])),
        FnCase::boxed("mul", |r| vec![normal(&[2, 3], r), normal(&[2, 3], r)], |g, v| g.mul(v[0], v[1])),
        FnCase::boxed("div", |r| vec![normal(&[6], r), away_from_zero(&[6], r)], |g, v| g.div(v[0], v[1])),
        FnCase::boxed(
            "minimum",
            |r| {
                let a = normal(&[8], r);
                let gap = away_from_zero(&[8], r);
                let b = Tensor::from_vec(a.data().iter().zip(gap.data()).map(|(x, d)| x + d).collect());
                vec![a, b]
            },
            |g, v| g.minimum(v[0], v[1]),
        ),
        FnCase::boxed("scale", |r| vec![normal(&[5], r)], |g, v| Ok(g.scale(v[0], -2.5))),
        FnCase::boxed("neg", |r| vec![normal(&[5], r)], |g, v| Ok(g.neg(v[0]))),
        FnCase::boxed("add_scalar", |r| vec![normal(&[5], r)], |g, v| Ok(g.add_scalar(v[0], 0.7))),
        FnCase::boxed("sum", |r| vec![normal(&[2, 2, 3], r)], |g, v| Ok(g.sum(v[0]))),
        FnCase::boxed("mean", |r| vec![normal(&[2, 2, 3], r)], |g, v| Ok(g.mean(v[0]))),
        FnCase::boxed("squared_l2", |r| vec![normal(&[7], r)], |g, v| Ok(g.squared_l2(v[0]))),
        FnCase::boxed(
            "concat_channels",
            |r| vec![normal(&[2, 2, 3], r), normal(&[1, 2, 3], r)],
            |g, v| g.concat_channels(&[v[0], v[1]]),
        ),
        FnCase::boxed("concat", |r| vec![normal(&[2, 3], r), normal(&[1, 3], r)], |g, v| g.concat(&[v[0], v[1]])),
        FnCase::boxed("flatten", |r| vec![normal(&[2, 2, 3], r)], |g, v| g.flatten(v[0])),
        FnCase::boxed("slice", |r| vec![normal(&[4, 2, 2], r)], |g, v| g.slice(v[0], 1, 2)),
        FnCase::boxed("reshape", |r| vec![normal(&[2, 3, 2], r)], |g, v| g.reshape(v[0], &[3, 4])),
        FnCase::boxed(
            "linear",
            |r| vec![normal(&[5], r), normal(&[3, 5], r), normal(&[3], r)],
            |g, v| g.linear(v[0], v[1], v[2]),
        ),
        FnCase::boxed("spatial_mean", |r| vec![normal(&[3, 2, 4], r)], |g, v| g.spatial_mean(v[0])),
        FnCase::boxed("broadcast_spatial", |r| vec![normal(&[3, 1, 1], r)], |g, v| g.broadcast_spatial(v[0], 2, 3)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lookup_by_name() {
        let r = GradCheckRegistry::with_primitives();
        assert!(r.get("conv2d").is_some());
        assert!(r.get("depthwise_xcorr").is_some());
        assert!(r.get("no_such_op").is_none());
        assert_eq!(r.names().count(), r.len());
    }

    #[test]
    fn every_primitive_passes_a_quick_check() {
        let r = GradCheckRegistry::with_primitives();
        for case in r.iter() {
            let rep = check_case(case, 7, 2).unwrap();
            assert!(rep.passed(1e-4), "{} rel err {}", rep.name, rep.max_rel_err);
        }
    }

    struct WrongGrad;

    impl GradCase for WrongGrad {
        fn name(&self) -> &str {
            "wrong"
        }
        fn inputs(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
            vec![Tensor::uniform(&[4], 0.5, 1.5, rng)]
        }
        fn forward(&self, g: &mut Graph, v: &[Var]) -> Result<Var, TensorError> {
            let two = g.scale(v[0], 2.0);
            let stop = g.constant(g.value(v[0]).clone());
            g.sub(two, stop)
        }
    }

    #[test]
    fn detects_a_detached_path() {
        // The constant copy hides one path from the tape, so the analytic
        // gradient is 2 while the true derivative is 1.
        let rep = check_case(&WrongGrad, 1, 1).unwrap();
        assert!(!rep.passed(1e-4));
    }
}
