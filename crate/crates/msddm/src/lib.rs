//! First-passage-time analysis for multistage drift diffusion models and
//! time-varying Ornstein-Uhlenbeck processes.
//!
//! The crate computes error rates, decision-time moments, first-passage
//! densities and CDFs (unconditional and conditioned on the absorbing
//! boundary) for diffusion processes whose drift, diffusion rate and
//! thresholds are piecewise constant in time, validates every analytic
//! result against a built-in Euler-Maruyama Monte-Carlo oracle, and
//! optimizes decision thresholds for reward rate.
//!
//! All numerical code is generic over the scalar type through [`Real`]
//! (`f32` or `f64`); the `*64` aliases at the crate root pin the common
//! double-precision instantiations.

pub mod aggregate;
pub mod ddm;
pub mod density;
pub mod error;
pub mod montecarlo;
pub mod ou;
mod real;
pub mod reward;
pub mod stage;

pub use error::{Error, Result};
pub use real::Real;

pub use aggregate::{analyze, analyze_scalars, two_stage_closed_form};
pub use ddm::{Boundary, Repr, StageTheta};
pub use density::{ConditionedDensity, EvidenceDist};
pub use montecarlo::{ks_distance, simulate, simulate_ou, SimConfig, SimOutcome};
pub use ou::{ou_fpt_distribution, OuModelSpec, OuStage};
pub use reward::{optimize_threshold, reward_rate, threshold_surface, RewardConfig};

/// Double-precision aliases for the domain types.
pub type StageTheta64 = ddm::StageTheta<f64>;
pub type ModelSpec64 = aggregate::ModelSpec<f64>;
pub type FptResult64 = aggregate::FptResult<f64>;
pub type ConditionedDensity64 = density::ConditionedDensity<f64>;
pub type OuModelSpec64 = ou::OuModelSpec<f64>;
pub type OuStage64 = ou::OuStage<f64>;
pub type SimConfig64 = montecarlo::SimConfig<f64>;
pub type RewardConfig64 = reward::RewardConfig<f64>;
