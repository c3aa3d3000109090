//! Finite-difference cases for the composite losses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{focal_loss, idsim_loss, iou_loss, jsd_mi, quality_bce, LossError};
use crate::autodiff::gradcheck::{FnCase, GradCase};
use crate::autodiff::{Tensor, TensorError};

fn lift(e: LossError) -> TensorError {
    match e {
        LossError::Tensor(t) => t,
        other => TensorError::Contract(other.to_string()),
    }
}

/// Fixed 0/1 mask over a 3x3 map with two positives.
fn mask() -> Tensor {
    Tensor::new(vec![1, 3, 3], vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]).expect("3x3 mask")
}

fn offsets(rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(&[4, 3, 3], 0.5, 3.0, rng)
}

/// Regression target drawn from a fixed seed.
fn fixed_target() -> Tensor {
    offsets(&mut ChaCha8Rng::seed_from_u64(17))
}

/// Loss-level cases. Targets are fixed, so only predictions are differentiated.
pub fn gradcheck_cases() -> Vec<Box<dyn GradCase>> {
    vec![
        FnCase::boxed(
            "jsd_mi",
            |r| vec![Tensor::randn(&[6], 3.0, r), Tensor::randn(&[6], 3.0, r)],
            |g, v| jsd_mi(g, v[0], v[1]).map_err(lift),
        ),
        FnCase::boxed(
            "focal_loss",
            |r| vec![Tensor::randn(&[1, 3, 3], 2.0, r)],
            |g, v| focal_loss(g, v[0], &mask()).map_err(lift),
        ),
        FnCase::boxed(
            "quality_bce",
            |r| vec![Tensor::randn(&[1, 3, 3], 2.0, r)],
            |g, v| {
                let q = Tensor::new(vec![1, 3, 3], (0..9).map(|k| 0.1 * k as f64).collect())?;
                quality_bce(g, v[0], &q, &mask()).map_err(lift)
            },
        ),
        FnCase::boxed(
            "iou_loss",
            |r| vec![offsets(r)],
            |g, v| iou_loss(g, v[0], &fixed_target(), &mask()).map_err(lift),
        ),
        FnCase::boxed(
            "idsim_loss",
            |r| vec![Tensor::randn(&[2, 3, 3], 1.0, r), Tensor::randn(&[2, 3, 3], 1.0, r)],
            |g, v| idsim_loss(g, v[0], v[1], 0.05).map_err(lift),
        ),
    ]
}
