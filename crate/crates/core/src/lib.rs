//! Siamese single-object tracker whose backbone features are split into
//! identity-related and identity-unrelated parts, trained with a
//! Jensen-Shannon mutual-information objective, an identity-similarity
//! loss and anchor-free classification/quality/regression losses.

pub mod autodiff;
pub mod bench;
pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tracker;
pub mod trainer;
