use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ComponentParams, CovarianceFamily, ModelKind};

/// How a fit is started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Random hard partitions, each refined by one regression reassignment.
    RandomPartition,
    /// Hard partition with 0-based component labels.
    Partition(Vec<usize>),
    /// Starting parameter values.
    Params(Vec<ComponentParams>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub g: usize,
    /// Fourier order `k`.
    pub order: usize,
    /// Fixed period per component.
    pub omegas: Vec<f64>,
    /// Stop once every parameter's relative change falls below this.
    pub rel_tol: f64,
    /// Alternative stop on relative objective change.
    pub loglik_tol: f64,
    pub max_iter: usize,
    pub n_starts: usize,
    pub init: Init,
    pub seed: u64,
    pub family: CovarianceFamily,
    pub rho_bound: f64,
    /// Hold `rho` at this value instead of estimating it.
    pub fixed_rho: Option<f64>,
    pub variance_floor: f64,
}

impl FitConfig {
    pub fn new(g: usize, omegas: Vec<f64>, kind: ModelKind) -> Self {
        Self {
            g,
            order: 1,
            omegas,
            rel_tol: 1e-5,
            loglik_tol: 1e-10,
            max_iter: 1000,
            n_starts: 10,
            init: Init::RandomPartition,
            seed: 0,
            family: kind.family(),
            rho_bound: 0.99,
            fixed_rho: None,
            variance_floor: 1e-8,
        }
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_family(mut self, family: CovarianceFamily) -> Self {
        self.family = family;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.g == 0 {
            return Err(Error::Invalid("g must be at least 1".into()));
        }
        if self.order == 0 {
            return Err(Error::Invalid("Fourier order must be at least 1".into()));
        }
        if self.omegas.len() != self.g {
            return Err(Error::Invalid(format!(
                "{} periods given for {} components",
                self.omegas.len(),
                self.g
            )));
        }
        if self.omegas.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Invalid("periods must be positive".into()));
        }
        if !(self.rel_tol > 0.0) || !(self.loglik_tol >= 0.0) {
            return Err(Error::Invalid("tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Invalid("max_iter must be at least 1".into()));
        }
        if self.n_starts == 0 {
            return Err(Error::Invalid("at least one start is required".into()));
        }
        if !(self.rho_bound > 0.0 && self.rho_bound < 1.0) {
            return Err(Error::Invalid("rho_bound must lie in (0, 1)".into()));
        }
        if let Some(r) = self.fixed_rho {
            if r.abs() > self.rho_bound {
                return Err(Error::Invalid("fixed rho exceeds rho_bound".into()));
            }
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::Invalid("variance floor must be positive".into()));
        }
        match &self.init {
            Init::Partition(labels) => {
                if let Some(bad) = labels.iter().find(|&&l| l >= self.g) {
                    return Err(Error::Invalid(format!("partition label {bad} >= g")));
                }
            }
            Init::Params(params) => {
                if params.len() != self.g {
                    return Err(Error::Invalid(format!(
                        "{} starting components for g = {}",
                        params.len(),
                        self.g
                    )));
                }
            }
            Init::RandomPartition => {}
        }
        Ok(())
    }
}
