//! Mixture of linear mixed models with AR(1) gene effects and shared
//! cluster effects, fitted by EM.

mod config;
mod estep;
mod fit;
mod mstep;

pub use config::{FitConfig, Init};
pub use estep::{
    conditional_responsibilities, e_step_random_effects, e_step_responsibilities,
    sufficient_statistics, ClusterEffect, ComponentStats, RandomEffectsPosterior, Responsibilities,
};
pub use fit::{fit, observed_loglik, FitResult, StopReason};
pub use mstep::{expected_complete_loglik, m_step};


