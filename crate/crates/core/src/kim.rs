//! Baseline mixture of Fourier regressions with AR(1) residuals and no
//! random effects. Runs on the shared EM core with the residual family
//! swapped.

use serde::{Deserialize, Serialize};

use crate::em::{fit, FitConfig, FitResult, Init};
use crate::error::Result;
use crate::model::{ComponentParams, CovarianceFamily, MixtureModel, ProfileMatrix};

/// Parameters of one baseline component; the residual covariance is
/// `theta2 * A(rho)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KimParams {
    pub p: f64,
    pub beta: Vec<f64>,
    pub theta2: f64,
    pub rho: f64,
    pub omega: f64,
}

impl From<&ComponentParams> for KimParams {
    fn from(c: &ComponentParams) -> Self {
        Self {
            p: c.p,
            beta: c.beta.clone(),
            theta2: c.theta2,
            rho: c.rho,
            omega: c.omega,
        }
    }
}

impl From<&KimParams> for ComponentParams {
    fn from(k: &KimParams) -> Self {
        Self {
            p: k.p,
            beta: k.beta.clone(),
            theta2: k.theta2,
            rho: k.rho,
            sigma2: 0.0,
            d2: 0.0,
            omega: k.omega,
        }
    }
}

pub fn kim_params(model: &MixtureModel) -> Vec<KimParams> {
    model.components.iter().map(KimParams::from).collect()
}

/// Fit the baseline. Whatever family `config` names is replaced by the
/// AR(1)-residual family.
pub fn fit_kim(data: &ProfileMatrix, config: &FitConfig) -> Result<FitResult> {
    let config = config.clone().with_family(CovarianceFamily::Ar1Residual);
    fit(data, &config)
}

/// Config starting the baseline from given parameters.
pub fn from_params(config: FitConfig, params: &[KimParams]) -> FitConfig {
    config.with_init(Init::Params(params.iter().map(ComponentParams::from).collect()))
}
