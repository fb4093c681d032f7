//! Levenberg-Marquardt training for small neural networks.
//!
//! The [`optim_lm`] module holds the optimizer: a damped Gauss-Newton solve
//! with a running max-diagonal damping matrix, conjugacy-maximising adaptive
//! momentum, a learning-rate grid search on rejected steps, and an uphill
//! acceptance rule. [`optim_baselines`] provides SGD, Adam, L-BFGS and a
//! Hessian-free method for comparison, and [`harness`] runs experiments on a
//! noisy sine regression task and on MNIST.

// `!(x > 0.0)` is used on purpose throughout so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod loss;
pub mod net;
pub mod optim_baselines;
pub mod optim_lm;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use loss::{CeCurvature, LossKind};
pub use net::{Activation, Batch, LayerSpec, Network, ParamVector, Shape};
