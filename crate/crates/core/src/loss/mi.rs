use super::{LossError, LossWeights};
use crate::autodiff::{Graph, Tensor, TensorError, Var};
use crate::model::Network;

/// Discriminator scoring `(f, f̃)` pairs.
pub trait PairScorer {
    /// One score for the whole pair, shape `[1]`.
    fn global(&self, g: &mut Graph, f: Var, f_tilde: Var) -> Result<Var, TensorError>;

    /// One score per spatial site of `f`, shape `[1,H,W]`.
    fn local(&self, g: &mut Graph, f: Var, f_tilde: Var) -> Result<Var, TensorError>;
}

impl PairScorer for Network<'_> {
    fn global(&self, g: &mut Graph, f: Var, f_tilde: Var) -> Result<Var, TensorError> {
        self.global_score(g, f, f_tilde)
    }

    fn local(&self, g: &mut Graph, f: Var, f_tilde: Var) -> Result<Var, TensorError> {
        self.local_scores(g, f, f_tilde)
    }
}

/// Scorer that ignores its inputs.
#[derive(Clone, Copy, Debug)]
pub struct ConstantScorer(pub f64);

impl PairScorer for ConstantScorer {
    fn global(&self, g: &mut Graph, _f: Var, _f_tilde: Var) -> Result<Var, TensorError> {
        Ok(g.scalar(self.0))
    }

    fn local(&self, g: &mut Graph, f: Var, _f_tilde: Var) -> Result<Var, TensorError> {
        let (_, h, w) = g.value(f).chw()?;
        Ok(g.constant(Tensor::full(&[1, h, w], self.0)))
    }
}

/// Jensen-Shannon MI estimate `E_P[-sp(-T)] - E_Q[sp(T)]` from scores of
/// joint and marginal pairs. Bounded above by zero.
pub fn jsd_mi(g: &mut Graph, joint: Var, marginal: Var) -> Result<Var, LossError> {
    if g.value(joint).numel() == 0 || g.value(marginal).numel() == 0 {
        return Err(LossError::Contract("jsd_mi needs non-empty joint and marginal scores".into()));
    }
    let neg = g.neg(joint);
    let sp_j = g.softplus(neg)?;
    let pos_term = g.mean(sp_j);
    let sp_m = g.softplus(marginal)?;
    let neg_term = g.mean(sp_m);
    let s = g.add(pos_term, neg_term)?;
    Ok(g.neg(s))
}

fn check_batch(f: &[Var], f_tilde: &[Var]) -> Result<usize, LossError> {
    if f.len() != f_tilde.len() {
        return Err(LossError::Contract(format!("{} features vs {} representations", f.len(), f_tilde.len())));
    }
    if f.len() < 2 {
        return Err(LossError::Contract(format!(
            "MI estimation needs a batch of at least 2 for negative pairs, got {}",
            f.len()
        )));
    }
    Ok(f.len())
}

/// Scores every joint pair `(f_i, f̃_i)` and marginal pair
/// `(f_i, f̃_{i+1 mod B})`, each flattened and concatenated.
fn pair_scores(
    g: &mut Graph,
    f: &[Var],
    f_tilde: &[Var],
    score: impl Fn(&mut Graph, Var, Var) -> Result<Var, TensorError>,
) -> Result<(Var, Var), LossError> {
    let b = check_batch(f, f_tilde)?;
    let mut joint = Vec::with_capacity(b);
    let mut marginal = Vec::with_capacity(b);
    for i in 0..b {
        let j = score(g, f[i], f_tilde[i])?;
        joint.push(g.flatten(j)?);
        let m = score(g, f[i], f_tilde[(i + 1) % b])?;
        marginal.push(g.flatten(m)?);
    }
    let joint = g.concat(&joint)?;
    let marginal = g.concat(&marginal)?;
    Ok((joint, marginal))
}

/// Global MI between whole feature maps and their disentangled
/// representation, with a cyclic shift of the batch as negatives.
pub fn global_mi(g: &mut Graph, f: &[Var], f_tilde: &[Var], scorer: &dyn PairScorer) -> Result<Var, LossError> {
    let (j, m) = pair_scores(g, f, f_tilde, |g, a, b| scorer.global(g, a, b))?;
    jsd_mi(g, j, m)
}

/// Local MI averaged over the spatial sites of `f`. Every site carries the
/// same number of joint and marginal scores, so pooling all of them
/// equals the mean of the per-site estimates.
pub fn local_mi(g: &mut Graph, f: &[Var], f_tilde: &[Var], scorer: &dyn PairScorer) -> Result<Var, LossError> {
    let (j, m) = pair_scores(g, f, f_tilde, |g, a, b| scorer.local(g, a, b))?;
    jsd_mi(g, j, m)
}

/// Both MI estimates and their weighted objective.
#[derive(Clone, Copy, Debug)]
pub struct MiTerms {
    pub global: Var,
    pub local: Var,
    /// `rho * global + gamma * local`, to be maximized.
    pub objective: Var,
}

pub fn mi_loss(
    g: &mut Graph,
    f: &[Var],
    f_tilde: &[Var],
    scorer: &dyn PairScorer,
    weights: &LossWeights,
) -> Result<MiTerms, LossError> {
    let global = global_mi(g, f, f_tilde, scorer)?;
    let local = local_mi(g, f, f_tilde, scorer)?;
    let wg = g.scale(global, weights.rho);
    let wl = g.scale(local, weights.gamma);
    let objective = g.add(wg, wl)?;
    Ok(MiTerms { global, local, objective })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_LN2: f64 = 2.0 * std::f64::consts::LN_2;

    #[test]
    fn jsd_examples() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(&[5]));
        let v = jsd_mi(&mut g, z, z).unwrap();
        assert!((g.item(v) + TWO_LN2).abs() < 1e-12);

        let j = g.constant(Tensor::full(&[3], 50.0));
        let m = g.constant(Tensor::full(&[3], -50.0));
        let v = jsd_mi(&mut g, j, m).unwrap();
        assert!(g.item(v).abs() < 1e-15);

        let j = g.constant(Tensor::from_vec(vec![1.0]));
        let m = g.constant(Tensor::from_vec(vec![-1.0]));
        let v = jsd_mi(&mut g, j, m).unwrap();
        assert!((g.item(v) + 0.626_523_4).abs() < 1e-7);
    }

    #[test]
    fn constant_scorer_gives_uninformative_value() {
        let mut g = Graph::new();
        let f: Vec<Var> = (0..3).map(|i| g.constant(Tensor::full(&[2, 3, 3], i as f64))).collect();
        let ft: Vec<Var> = (0..3).map(|i| g.constant(Tensor::full(&[4, 3, 3], -(i as f64)))).collect();
        let gm = global_mi(&mut g, &f, &ft, &ConstantScorer(0.0)).unwrap();
        let lm = local_mi(&mut g, &f, &ft, &ConstantScorer(0.0)).unwrap();
        assert!((g.item(gm) + TWO_LN2).abs() < 1e-12);
        assert!((g.item(lm) + TWO_LN2).abs() < 1e-12);
        let w = LossWeights::default();
        let t = mi_loss(&mut g, &f, &ft, &ConstantScorer(0.0), &w).unwrap();
        assert!((g.item(t.objective) + 0.138_629_4).abs() < 1e-7);
        let w0 = LossWeights { rho: 0.0, gamma: 0.0, ..w };
        let t0 = mi_loss(&mut g, &f, &ft, &ConstantScorer(0.0), &w0).unwrap();
        assert_eq!(g.item(t0.objective), 0.0);
    }

    #[test]
    fn batch_of_one_is_rejected() {
        let mut g = Graph::new();
        let f = g.constant(Tensor::zeros(&[1, 2, 2]));
        assert!(matches!(global_mi(&mut g, &[f], &[f], &ConstantScorer(0.0)), Err(LossError::Contract(_))));
    }
}
