//! Output label mapping for visual reprogramming.
//!
//! A frozen classifier over `k_s` source labels is adapted to a `k_t`-class
//! downstream task by (a) an additive input pattern and (b) a `k_s × k_t`
//! label mapping matrix that turns source logits into downstream scores.
//! This crate provides the gradient-free mapping estimators (random,
//! frequency-greedy, iterative, Bayesian and top-K aggregated Bayesian), a
//! small differentiable stand-in classifier, the interleaved training loop,
//! a synthetic subclass task generator and a brute-force checker for the
//! binary expected-accuracy inequalities.

pub mod error;
pub mod io;
pub mod mapping;
pub mod model;
pub mod numerics;
pub mod parallel;
pub mod synth;
pub mod theory;
pub mod vr;

pub use error::{Error, Result};
pub use mapping::{LogitsTable, MappingMatrix, Method};
pub use model::{Arch, SimPretrainedModel};
pub use numerics::DenseTable;
pub use synth::{Dataset, SubclassTaskSpec};
pub use vr::{TrainConfig, VrKind, VrPattern};
