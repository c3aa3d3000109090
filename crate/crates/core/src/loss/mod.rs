//! Training objectives: mutual-information estimation, identity
//! similarity, target assignment and the detection losses.

mod cases;
mod detection;
mod mi;
mod targets;

pub use cases::gradcheck_cases;
pub use detection::{cr_loss, focal_loss, iou_loss, quality_bce, CrTerms, FOCAL_ALPHA, FOCAL_GAMMA};
pub use mi::{global_mi, jsd_mi, local_mi, mi_loss, ConstantScorer, MiTerms, PairScorer};
pub use targets::{assign_targets, ScoreGrid, TargetMaps};

use crate::autodiff::{Graph, TensorError, Var};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LossError {
    #[error("loss contract violation: {0}")]
    Contract(String),
    #[error("loss domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Balancing coefficients of the training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Global MI weight.
    pub rho: f64,
    /// Local MI weight.
    pub gamma: f64,
    /// Identity-similarity weight.
    pub omega: f64,
    /// Quality BCE weight.
    pub lambda1: f64,
    /// IoU loss weight.
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { rho: 0.05, gamma: 0.05, omega: 0.05, lambda1: 1.0, lambda2: 3.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let all = [
            ("rho", self.rho),
            ("gamma", self.gamma),
            ("omega", self.omega),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(LossError::Domain(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// `omega * ||f_r(Z) - f_r(Z')||^2`, summed over every element.
pub fn idsim_loss(g: &mut Graph, f_r_z: Var, f_r_zp: Var, omega: f64) -> Result<Var, LossError> {
    let d = g.sub(f_r_z, f_r_zp)?;
    let sq = g.squared_l2(d);
    Ok(g.scale(sq, omega))
}

/// `cr - mi_objective + idsim`: minimizing it maximizes the MI objective.
pub fn total_loss(g: &mut Graph, cr: Var, mi_objective: Var, idsim: Var) -> Result<Var, LossError> {
    let t = g.sub(cr, mi_objective)?;
    Ok(g.add(t, idsim)?)
}

/// Mutual information in nats of a bivariate Gaussian with correlation `r`.
pub fn exact_mi_gaussian(r: f64) -> Result<f64, LossError> {
    if r.is_nan() || r.abs() >= 1.0 {
        return Err(LossError::Domain(format!("correlation {r} outside (-1, 1)")));
    }
    Ok(-0.5 * (1.0 - r * r).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn idsim_examples() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::full(&[4], 1.0));
        let b = g.constant(Tensor::zeros(&[4]));
        let l = idsim_loss(&mut g, a, b, 0.05).unwrap();
        assert!((g.item(l) - 0.2).abs() < 1e-15);
        let l2 = idsim_loss(&mut g, a, b, 0.1).unwrap();
        assert_eq!(g.item(l2), 2.0 * g.item(l));
        let same = idsim_loss(&mut g, a, a, 0.05).unwrap();
        assert_eq!(g.item(same), 0.0);
    }

    #[test]
    fn total_is_signed_sum() {
        let mut g = Graph::new();
        let (cr, mi, id) = (g.scalar(1.0), g.scalar(0.5), g.scalar(0.2));
        let t = total_loss(&mut g, cr, mi, id).unwrap();
        assert!((g.item(t) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn gaussian_mi_oracle() {
        assert_eq!(exact_mi_gaussian(0.0).unwrap(), 0.0);
        assert!((exact_mi_gaussian(0.9).unwrap() - 0.830_366).abs() < 1e-6);
        assert_eq!(exact_mi_gaussian(-0.5).unwrap(), exact_mi_gaussian(0.5).unwrap());
        assert!(exact_mi_gaussian(1.0).is_err());
    }

    #[test]
    fn weights_reject_negative() {
        assert!(LossWeights::default().validate().is_ok());
        let w = LossWeights { omega: -1.0, ..LossWeights::default() };
        assert!(w.validate().is_err());
    }
}
