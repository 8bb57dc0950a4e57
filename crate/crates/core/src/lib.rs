//! Kernel scoring rules on finite forecast distributions, and the
//! decomposition of a linear pool's entropy into average component entropy
//! plus disagreement.

pub mod distributions;
pub mod error;
pub mod kernels;
pub mod numeric;
pub mod pooling;
pub mod scoring;
pub mod survey;
pub mod verify;

pub use distributions::{
    linear_pool, mean_and_variance, CategoricalDist, EmpiricalDist, ForecastDistribution, Moments,
    Outcome, OutcomeSpace, PoolSpec,
};
pub use error::{Error, Result};
pub use kernels::{KernelMatrix, KernelSpec, Rule};
pub use pooling::{closed_form_disagreement, decompose, ex_post_identity, gen_disagreement, Decomposition};
