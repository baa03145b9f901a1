//! Laplace and variational Gaussian posteriors for neural networks, and
//! their equivalent linear-model and Gaussian-process views.

pub mod data;
pub mod dnn2gp;
pub mod error;
pub mod evidence;
pub mod experiments;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod objective;
pub mod optim;
pub mod oracles;
pub mod posterior;
pub mod rng;
pub mod scalar;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type Params = model::ParamVector<f64>;
pub type Loss = loss::LossKind<f64>;
pub type Dataset = data::Dataset<f64>;
pub type Posterior = posterior::GaussApprox<f64>;
