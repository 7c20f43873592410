//! Fixed-effects selection in high-dimensional linear mixed models when
//! covariates may be correlated with the model error.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! simulation engine and the aliases below fix `f64`.

pub mod baselines;
pub mod error;
pub mod linalg;
pub mod lmm;
pub mod optim;
pub mod penalty;
pub mod pfgmm;
pub mod scalar;
pub mod second_stage;
pub mod select;
pub mod sim;
pub mod varcomp;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use scalar::Scalar;

pub type Dataset = lmm::GroupedDataset<f64>;
pub type Params = lmm::ModelParams<f64>;
pub type Penalty = penalty::PenaltySpec<f64>;
pub type Fit = baselines::FitResult<f64>;
pub type Proxy = pfgmm::ProxySpec<f64>;
pub type Problem = pfgmm::PfgmmProblem<f64>;
pub type Instruments = pfgmm::InstrumentSource<f64>;

pub type DatasetF32 = lmm::GroupedDataset<f32>;
pub type PenaltyF32 = penalty::PenaltySpec<f32>;
