//! Mixture model types, component covariance and component log-density.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ar1::{ar1_cov, Ar1Spec};
use crate::error::{Error, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Which covariance structure a component carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceFamily {
    /// `theta^2 A(rho)` gene effect (optional), `d^2 I` cluster effect
    /// (optional) and `sigma^2 I` white noise.
    RandomEffects {
        gene_effect: bool,
        cluster_effect: bool,
    },
    /// Residual covariance `theta^2 A(rho)` and no random effects.
    Ar1Residual,
}

impl CovarianceFamily {
    pub fn gene_effect(&self) -> bool {
        match self {
            Self::RandomEffects { gene_effect, .. } => *gene_effect,
            Self::Ar1Residual => false,
        }
    }

    pub fn cluster_effect(&self) -> bool {
        match self {
            Self::RandomEffects { cluster_effect, .. } => *cluster_effect,
            Self::Ar1Residual => false,
        }
    }

    /// Whether the component covariance has an AR(1) block.
    pub fn has_ar1(&self) -> bool {
        matches!(self, Self::Ar1Residual) || self.gene_effect()
    }

    pub fn has_white_noise(&self) -> bool {
        matches!(self, Self::RandomEffects { .. })
    }
}

/// Named model variants exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Gene AR(1) effect plus cluster effect.
    EmWire,
    /// Gene AR(1) effect only.
    Qin,
    /// Plain mixture of Fourier regressions.
    RegMix,
    /// AR(1) residual covariance.
    Kim,
}

impl ModelKind {
    pub fn family(self) -> CovarianceFamily {
        match self {
            Self::EmWire => CovarianceFamily::RandomEffects {
                gene_effect: true,
                cluster_effect: true,
            },
            Self::Qin => CovarianceFamily::RandomEffects {
                gene_effect: true,
                cluster_effect: false,
            },
            Self::RegMix => CovarianceFamily::RandomEffects {
                gene_effect: false,
                cluster_effect: false,
            },
            Self::Kim => CovarianceFamily::Ar1Residual,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::EmWire => "emwire",
            Self::Qin => "qin",
            Self::RegMix => "regmix",
            Self::Kim => "kim",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "emwire" | "em-w" | "emw" => Ok(Self::EmWire),
            "qin" => Ok(Self::Qin),
            "regmix" => Ok(Self::RegMix),
            "kim" => Ok(Self::Kim),
            other => Err(Error::Invalid(format!("unknown model '{other}'"))),
        }
    }
}

/// Parameters of one mixture component.
///
/// Variance terms that the model family disables are held at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    pub p: f64,
    /// `(a0, a1, b1, ..., ak, bk)`.
    pub beta: Vec<f64>,
    pub theta2: f64,
    pub rho: f64,
    pub sigma2: f64,
    pub d2: f64,
    pub omega: f64,
}

impl ComponentParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.p, self.theta2, self.rho, self.sigma2, self.d2, self.omega]
            .iter()
            .chain(self.beta.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("component parameters".into()));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Domain(format!("mixing proportion {} outside [0, 1]", self.p)));
        }
        if self.theta2 < 0.0 || self.sigma2 < 0.0 || self.d2 < 0.0 {
            return Err(Error::Domain("variance parameters must be non-negative".into()));
        }
        if self.rho.abs() >= 1.0 {
            return Err(Error::Domain(format!("|rho| must be < 1, got {}", self.rho)));
        }
        if self.omega <= 0.0 {
            return Err(Error::Domain(format!("period must be positive, got {}", self.omega)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub components: Vec<ComponentParams>,
    pub order: usize,
    pub family: CovarianceFamily,
}

impl MixtureModel {
    pub fn g(&self) -> usize {
        self.components.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Domain("mixture needs at least one component".into()));
        }
        let q = crate::fourier::n_coefficients(self.order);
        for c in &self.components {
            c.validate()?;
            if c.beta.len() != q {
                return Err(Error::Dimension(format!(
                    "component has {} coefficients, order {} needs {q}",
                    c.beta.len(),
                    self.order
                )));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.p).sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Domain(format!("mixing proportions sum to {total}")));
        }
        Ok(())
    }

    /// Zero out parameters the family does not use.
    pub fn canonicalize(&mut self) {
        let family = self.family;
        for c in &mut self.components {
            if !family.has_ar1() {
                c.theta2 = 0.0;
                c.rho = 0.0;
            }
            if !family.has_white_noise() {
                c.sigma2 = 0.0;
            }
            if !family.cluster_effect() {
                c.d2 = 0.0;
            }
        }
    }
}

/// Expression profiles, one row per gene.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileMatrix {
    values: Vec<f64>,
    n: usize,
    m: usize,
    times: Vec<f64>,
    gene_ids: Vec<String>,
}

impl ProfileMatrix {
    /// `values` is row-major `n x m`.
    pub fn new(values: Vec<f64>, times: Vec<f64>, gene_ids: Vec<String>) -> Result<Self> {
        let m = times.len();
        let n = gene_ids.len();
        if m == 0 {
            return Err(Error::Dimension("profiles need at least one time point".into()));
        }
        if values.len() != n * m {
            return Err(Error::Dimension(format!(
                "{} values for {n} genes x {m} time points",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "value for gene {} at time index {}",
                gene_ids[pos / m],
                pos % m
            )));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("time points must be finite and strictly increasing".into()));
        }
        Ok(Self {
            values,
            n,
            m,
            times,
            gene_ids,
        })
    }

    /// Build from rows with generated ids `g1, g2, ...`.
    pub fn from_rows(rows: &[Vec<f64>], times: Vec<f64>) -> Result<Self> {
        let m = times.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != m) {
            return Err(Error::Dimension(format!("row {bad} has {} values, expected {m}", rows[bad].len())));
        }
        let ids = (1..=rows.len()).map(|i| format!("g{i}")).collect();
        Self::new(rows.concat(), times, ids)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.m..(j + 1) * self.m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.m)
    }

    /// Copy with replaced values, keeping ids and times.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.times.clone(), self.gene_ids.clone())
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * self.m);
        let mut ids = Vec::with_capacity(rows.len());
        for &j in rows {
            values.extend_from_slice(self.row(j));
            ids.push(self.gene_ids[j].clone());
        }
        Self::new(values, self.times.clone(), ids)
    }
}

/// `theta^2 A(rho) + d^2 I + sigma^2 I`.
pub fn component_cov(c: &ComponentParams, m: usize) -> Result<DMatrix<f64>> {
    c.validate()?;
    if m == 0 {
        return Err(Error::Dimension("m must be at least 1".into()));
    }
    let mut cov = if c.theta2 > 0.0 {
        ar1_cov(&Ar1Spec::new(m, c.rho)?) * c.theta2
    } else {
        DMatrix::zeros(m, m)
    };
    for i in 0..m {
        cov[(i, i)] += c.d2 + c.sigma2;
    }
    Ok(cov)
}

/// Multivariate normal log-density through a Cholesky factorization.
pub fn mvn_logpdf(y: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    let m = y.len();
    if mean.len() != m || cov.nrows() != m || cov.ncols() != m {
        return Err(Error::Dimension("density arguments disagree in length".into()));
    }
    if y.iter().chain(mean).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("density argument".into()));
    }
    let chol = cov.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let r = DVector::from_iterator(m, y.iter().zip(mean).map(|(a, b)| a - b));
    let z = chol.l().solve_lower_triangular(&r).ok_or(Error::NotPositiveDefinite)?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * (m as f64 * LN_2PI + logdet + z.norm_squared()))
}

/// Log-density of one profile under a component: mean `X beta`,
/// covariance [`component_cov`].
pub fn component_logpdf(y: &[f64], x: &DMatrix<f64>, c: &ComponentParams) -> Result<f64> {
    if x.nrows() != y.len() || x.ncols() != c.beta.len() {
        return Err(Error::Dimension(format!(
            "design is {}x{}, profile has {} points and beta {} entries",
            x.nrows(),
            x.ncols(),
            y.len(),
            c.beta.len()
        )));
    }
    let mean = x * DVector::from_column_slice(&c.beta);
    let cov = component_cov(c, y.len())?;
    mvn_logpdf(y, mean.as_slice(), &cov)
}

/// `-0.5 * log(2 pi)`.
pub const STANDARD_NORMAL_LOG_PEAK: f64 = -0.5 * LN_2PI;
