//! Exemplar-free class-incremental learning with prototype drift compensation.
//!
//! A small differentiable network is trained task by task with logit
//! distillation. Old-class prototypes are then moved into the new feature
//! space, either by perturbing current samples towards them in the old space
//! and measuring how far those samples travel (adversarial drift
//! compensation), or by the baselines: Gaussian-weighted drift (SDC),
//! exemplar means (NME) or no compensation at all.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod check;
pub mod data;
pub mod drift;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod loss;
pub mod net;
pub mod proto;
pub mod reference;
pub mod tensor;
pub mod train;

pub use attack::{AdversarialBatch, AttackConfig};
pub use data::{LabeledDataset, SyntheticSpec, TaskStream};
pub use drift::{DriftEstimate, DriftMethod, ExemplarPolicy, ExemplarStore};
pub use error::{Error, Result};
pub use eval::{BackwardLedger, RunReport};
pub use experiment::{ExperimentConfig, MethodConfig};
pub use net::{Architecture, GradientSet, LossSpec, Network, Objective, Sgd};
pub use proto::PrototypeStore;
pub use tensor::Tensor;
pub use train::TrainConfig;
