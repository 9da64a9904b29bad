//! EM driver: initialization, iteration, stopping and multi-start selection.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::em::config::{FitConfig, Init};
use crate::em::estep::{
    assemble_posterior, build_kernels, cluster_effects, responsibility_pass, stats_from_cache,
    ClusterEffect, Responsibilities,
};
use crate::em::mstep::m_step;
use crate::error::{Error, Result};
use crate::fourier::{fourier_design, DesignSpec};
use crate::model::{ComponentParams, CovarianceFamily, MixtureModel, ProfileMatrix};

/// Why iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ParameterChange,
    LoglikChange,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: MixtureModel,
    pub responsibilities: Responsibilities,
    pub assignments: Vec<usize>,
    /// EM objective after initialization and after every iteration.
    pub loglik_trace: Vec<f64>,
    /// Sum over genes of the log marginal mixture density.
    pub marginal_loglik: f64,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub posterior_v: Vec<ClusterEffect>,
    /// `E[u_jh]`, indexed `(j * g + h) * m + t`.
    pub posterior_u: Vec<f64>,
    /// Index of the winning start.
    pub start: usize,
    /// Final objective of every start (`None` for failed starts).
    pub start_logliks: Vec<Option<f64>>,
}

impl FitResult {
    /// Final value of the EM objective.
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }

    pub fn posterior_u(&self, j: usize, h: usize) -> &[f64] {
        let g = self.model.g();
        let m = self.posterior_v[0].mean.len();
        &self.posterior_u[(j * g + h) * m..(j * g + h + 1) * m]
    }
}

/// Sum over genes of `log sum_h p_h f_h(y_j)` with each component density
/// the marginal normal of mean `X beta_h` and covariance
/// `theta^2 A + d^2 I + sigma^2 I`.
pub fn observed_loglik(data: &ProfileMatrix, model: &MixtureModel) -> Result<f64> {
    model.validate()?;
    let designs = super::estep::designs_for(data, model)?;
    let kernels = build_kernels(model, &designs, true)?;
    let effects = vec![ClusterEffect::absent(data.m()); model.g()];
    let mut tau = Responsibilities::new(vec![0.0; data.n() * model.g()], model.g())?;
    responsibility_pass(data, model, &kernels, &effects, &mut tau, true, None)
}

pub(crate) fn designs_from_config(data: &ProfileMatrix, config: &FitConfig) -> Result<Vec<DMatrix<f64>>> {
    config
        .omegas
        .iter()
        .map(|&w| fourier_design(&DesignSpec::new(data.times().to_vec(), config.order, w)?))
        .collect()
}

fn ols(x: &DMatrix<f64>, y: &[f64], component: usize) -> Result<Vec<f64>> {
    let xtx = x.transpose() * x;
    let chol = xtx.cholesky().ok_or(Error::RankDeficient(component))?;
    let b = chol.solve(&(x.transpose() * DVector::from_column_slice(y)));
    Ok(b.iter().copied().collect())
}

fn mean_profile(data: &ProfileMatrix, members: &[usize]) -> Vec<f64> {
    let m = data.m();
    let mut mean = vec![0.0; m];
    for &j in members {
        for (acc, y) in mean.iter_mut().zip(data.row(j)) {
            *acc += y;
        }
    }
    let k = members.len() as f64;
    mean.iter_mut().for_each(|v| *v /= k);
    mean
}

/// Moment-based starting parameters from a hard partition.
pub(crate) fn params_from_partition(
    data: &ProfileMatrix,
    labels: &[usize],
    config: &FitConfig,
    designs: &[DMatrix<f64>],
) -> Result<MixtureModel> {
    if labels.len() != data.n() {
        return Err(Error::Dimension(format!(
            "partition has {} labels for {} genes",
            labels.len(),
            data.n()
        )));
    }
    let m = data.m();
    let n = data.n() as f64;
    let floor = config.variance_floor;
    let family = config.family;
    let mut components = Vec::with_capacity(config.g);
    for (h, x) in designs.iter().enumerate() {
        let members: Vec<usize> = (0..data.n()).filter(|&j| labels[j] == h).collect();
        if members.is_empty() {
            return Err(Error::DegenerateComponent {
                component: h,
                weight: 0.0,
            });
        }
        let mean = mean_profile(data, &members);
        let beta = ols(x, &mean, h)?;
        let fitted = super::estep::component_mean(x, &beta);
        let shift: Vec<f64> = if family.cluster_effect() {
            mean.iter().zip(&fitted).map(|(a, b)| a - b).collect()
        } else {
            vec![0.0; m]
        };
        let (mut c0, mut c1) = (0.0, 0.0);
        let mut r = vec![0.0; m];
        for &j in &members {
            for (i, y) in data.row(j).iter().enumerate() {
                r[i] = y - fitted[i] - shift[i];
            }
            c0 += r.iter().map(|v| v * v).sum::<f64>();
            c1 += r.windows(2).map(|w| w[0] * w[1]).sum::<f64>();
        }
        c0 /= (members.len() * m) as f64;
        c1 /= (members.len() * m.saturating_sub(1).max(1)) as f64;
        let lag1 = if c0 > 0.0 { c1 / c0 } else { 0.0 };
        let mut c = ComponentParams {
            p: members.len() as f64 / n,
            beta,
            theta2: 0.0,
            rho: 0.0,
            sigma2: 0.0,
            d2: 0.0,
            omega: config.omegas[h],
        };
        match family {
            CovarianceFamily::RandomEffects {
                gene_effect,
                cluster_effect,
            } => {
                if gene_effect {
                    c.rho = config.fixed_rho.unwrap_or((2.0 * lag1).clamp(-0.9, 0.9));
                    c.theta2 = (0.5 * c0 * (1.0 - c.rho * c.rho)).max(floor);
                    c.sigma2 = (0.5 * c0).max(floor);
                } else {
                    c.sigma2 = c0.max(floor);
                }
                if cluster_effect {
                    c.d2 = (shift.iter().map(|v| v * v).sum::<f64>() / m as f64).max(floor);
                }
            }
            CovarianceFamily::Ar1Residual => {
                c.rho = config.fixed_rho.unwrap_or(lag1.clamp(-0.9, 0.9));
                c.theta2 = (c0 * (1.0 - c.rho * c.rho)).max(floor);
            }
        }
        components.push(c);
    }
    Ok(MixtureModel {
        components,
        order: config.order,
        family,
    })
}

/// Random hard partition followed by one regression reassignment.
fn random_partition(
    data: &ProfileMatrix,
    config: &FitConfig,
    designs: &[DMatrix<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let n = data.n();
    let g = config.g;
    let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..g)).collect();
    // Seed every component with at least one gene.
    for h in 0..g {
        if !labels.contains(&h) {
            let j = rng.random_range(0..n);
            labels[j] = h;
        }
    }
    let mut curves = Vec::with_capacity(g);
    for (h, x) in designs.iter().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&j| labels[j] == h).collect();
        if members.is_empty() {
            return Ok(labels);
        }
        let beta = ols(x, &mean_profile(data, &members), h)?;
        curves.push(super::estep::component_mean(x, &beta));
    }
    let refined: Vec<usize> = (0..n)
        .map(|j| {
            let y = data.row(j);
            let mut best = (f64::INFINITY, 0);
            for (h, curve) in curves.iter().enumerate() {
                let ss: f64 = y.iter().zip(curve).map(|(a, b)| (a - b) * (a - b)).sum();
                if ss < best.0 {
                    best = (ss, h);
                }
            }
            best.1
        })
        .collect();
    let min_size = 2;
    let ok = (0..g).all(|h| refined.iter().filter(|&&l| l == h).count() >= min_size);
    Ok(if ok { refined } else { labels })
}

fn relative_change(old: &MixtureModel, new: &MixtureModel) -> f64 {
    let rel = |a: f64, b: f64| {
        let d = (b - a).abs();
        if a != 0.0 {
            d / a.abs()
        } else {
            d
        }
    };
    let family = new.family;
    let mut worst: f64 = 0.0;
    for (a, b) in old.components.iter().zip(&new.components) {
        worst = worst.max(rel(a.p, b.p));
        for (x, y) in a.beta.iter().zip(&b.beta) {
            worst = worst.max(rel(*x, *y));
        }
        if family.has_ar1() {
            worst = worst.max(rel(a.theta2, b.theta2)).max(rel(a.rho, b.rho));
        }
        if family.has_white_noise() {
            worst = worst.max(rel(a.sigma2, b.sigma2));
        }
        if family.cluster_effect() {
            worst = worst.max(rel(a.d2, b.d2));
        }
    }
    worst
}

enum Start {
    Partition(Vec<usize>),
    Params(MixtureModel),
}

fn run_single(
    data: &ProfileMatrix,
    config: &FitConfig,
    designs: &[DMatrix<f64>],
    start: Start,
) -> Result<FitResult> {
    let g = config.g;
    let n = data.n();
    let m = data.m();
    let mut cache = vec![0.0; n * g * m];

    let (mut model, mut tau, hard) = match start {
        Start::Partition(labels) => {
            let model = params_from_partition(data, &labels, config, designs)?;
            let tau = Responsibilities::from_labels(&labels, g)?;
            (model, tau, true)
        }
        Start::Params(mut model) => {
            model.canonicalize();
            let family = model.family;
            let floor = config.variance_floor;
            for c in &mut model.components {
                if family.has_ar1() {
                    c.theta2 = c.theta2.max(floor);
                }
                if family.has_white_noise() {
                    c.sigma2 = c.sigma2.max(floor);
                }
                if family.cluster_effect() {
                    c.d2 = c.d2.max(floor);
                }
            }
            model.validate()?;
            let kernels = build_kernels(&model, designs, true)?;
            let absent = vec![ClusterEffect::absent(m); g];
            let mut tau = Responsibilities::new(vec![0.0; n * g], g)?;
            responsibility_pass(data, &model, &kernels, &absent, &mut tau, true, None)?;
            (model, tau, false)
        }
    };
    model.canonicalize();

    let mut kernels = build_kernels(&model, designs, false)?;
    let mut effects = cluster_effects(data, &model, &kernels, &tau)?;
    let mut objective = responsibility_pass(
        data,
        &model,
        &kernels,
        &effects,
        &mut tau,
        !hard,
        Some(&mut cache),
    )?;
    let mut trace = vec![objective];
    let mut stop_reason = StopReason::MaxIter;
    let mut iterations = 0;

    for _ in 0..config.max_iter {
        iterations += 1;
        let stats = stats_from_cache(data, &model, &kernels, &effects, &tau, &cache);
        let updated = m_step(&stats, &model, designs, config)?;
        let change = relative_change(&model, &updated);
        model = updated;
        kernels = build_kernels(&model, designs, false)?;
        effects = cluster_effects(data, &model, &kernels, &tau)?;
        let previous = objective;
        objective = responsibility_pass(
            data,
            &model,
            &kernels,
            &effects,
            &mut tau,
            true,
            Some(&mut cache),
        )?;
        if !objective.is_finite() {
            return Err(Error::NonFinite("EM objective".into()));
        }
        trace.push(objective);
        if change < config.rel_tol {
            stop_reason = StopReason::ParameterChange;
            break;
        }
        if (objective - previous).abs() <= config.loglik_tol * previous.abs() {
            stop_reason = StopReason::LoglikChange;
            break;
        }
    }

    let posterior = assemble_posterior(data, &model, &kernels, effects, &cache);
    let marginal_loglik = observed_loglik(data, &model)?;
    Ok(FitResult {
        assignments: tau.assignments(),
        responsibilities: tau,
        loglik_trace: trace,
        marginal_loglik,
        converged: stop_reason != StopReason::MaxIter,
        stop_reason,
        iterations,
        posterior_v: posterior.v,
        posterior_u: posterior.u_mean,
        model,
        start: 0,
        start_logliks: Vec::new(),
    })
}

/// Fit a mixture by EM. Random-partition starts are repeated `n_starts`
/// times and the run with the highest final objective is returned.
pub fn fit(data: &ProfileMatrix, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if data.n() <= config.g {
        return Err(Error::Invalid(format!(
            "need more genes ({}) than components ({})",
            data.n(),
            config.g
        )));
    }
    let designs = designs_from_config(data, config)?;
    let starts: Vec<Start> = match &config.init {
        Init::Partition(labels) => vec![Start::Partition(labels.clone())],
        Init::Params(params) => {
            let mut components = params.clone();
            for (c, &w) in components.iter_mut().zip(&config.omegas) {
                c.omega = w;
                if let Some(r) = config.fixed_rho {
                    c.rho = r;
                }
            }
            vec![Start::Params(MixtureModel {
                components,
                order: config.order,
                family: config.family,
            })]
        }
        Init::RandomPartition => {
            let mut out = Vec::with_capacity(config.n_starts);
            for s in 0..config.n_starts {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(s as u64);
                out.push(Start::Partition(random_partition(data, config, &designs, &mut rng)?));
            }
            out
        }
    };

    let total = starts.len();
    let mut best: Option<FitResult> = None;
    let mut logliks = Vec::with_capacity(total);
    let mut last_error = String::new();
    for (i, start) in starts.into_iter().enumerate() {
        match run_single(data, config, &designs, start) {
            Ok(mut result) => {
                logliks.push(Some(result.loglik()));
                let better = best.as_ref().is_none_or(|b| result.loglik() > b.loglik());
                if better {
                    result.start = i;
                    best = Some(result);
                }
            }
            Err(e) => {
                logliks.push(None);
                last_error = e.to_string();
            }
        }
    }
    let mut best = best.ok_or(Error::AllStartsFailed {
        starts: total,
        last: last_error,
    })?;
    best.start_logliks = logliks;
    Ok(best)
}
