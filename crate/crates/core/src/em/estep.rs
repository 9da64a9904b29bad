//! E-step: responsibilities and posterior moments of the random effects.
//!
//! The cluster effect `v_h` is one draw shared by every gene of component
//! `h`. Its posterior pools all genes with weights `tau_jh`:
//! precision `I/d^2 + n_h W^{-1}`, where `W = theta^2 A(rho) + sigma^2 I`.
//! Gene effects are then conditioned per gene on `y_j` and `v_h`;
//! integrating over the posterior of `v_h` adds `B Sigma_v B'` to their
//! covariance, with `B = theta^2 A W^{-1} = I - sigma^2 W^{-1}`.

use nalgebra::{DMatrix, DVector};

use crate::ar1::{ar1_cov, Ar1Spec, QuadformStats};
use crate::error::{Error, Result};
use crate::model::{CovarianceFamily, MixtureModel, ProfileMatrix, LN_2PI};

/// Posterior responsibilities, row-major `n x g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    values: Vec<f64>,
    g: usize,
}

impl Responsibilities {
    pub fn new(values: Vec<f64>, g: usize) -> Result<Self> {
        if g == 0 || !values.len().is_multiple_of(g) {
            return Err(Error::Dimension("responsibility matrix is not n x g".into()));
        }
        Ok(Self { values, g })
    }

    pub fn from_labels(labels: &[usize], g: usize) -> Result<Self> {
        let mut values = vec![0.0; labels.len() * g];
        for (j, &l) in labels.iter().enumerate() {
            if l >= g {
                return Err(Error::Invalid(format!("label {l} out of range for g = {g}")));
            }
            values[j * g + l] = 1.0;
        }
        Ok(Self { values, g })
    }

    pub fn n(&self) -> usize {
        self.values.len() / self.g
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.g..(j + 1) * self.g]
    }

    pub fn get(&self, j: usize, h: usize) -> f64 {
        self.values[j * self.g + h]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Column sums `n_h`.
    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.g];
        for row in self.values.chunks_exact(self.g) {
            for (acc, t) in w.iter_mut().zip(row) {
                *acc += t;
            }
        }
        w
    }

    /// Hard labels; ties go to the lowest component index.
    pub fn assignments(&self) -> Vec<usize> {
        self.values
            .chunks_exact(self.g)
            .map(|row| {
                let mut best = 0;
                for h in 1..row.len() {
                    if row[h] > row[best] {
                        best = h;
                    }
                }
                best
            })
            .collect()
    }
}

/// Posterior of one cluster effect `v_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterEffect {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    /// `log det cov`; unused when the effect is inactive.
    pub logdet_cov: f64,
    pub active: bool,
}

impl ClusterEffect {
    pub fn absent(m: usize) -> Self {
        Self {
            mean: vec![0.0; m],
            cov: DMatrix::zeros(m, m),
            logdet_cov: 0.0,
            active: false,
        }
    }

    /// `E[v'v]`.
    pub fn second_moment(&self) -> f64 {
        self.mean.iter().map(|x| x * x).sum::<f64>() + self.cov.trace()
    }
}

/// Posterior moments of `(u, v)` under the current model and responsibilities.
#[derive(Debug, Clone)]
pub struct RandomEffectsPosterior {
    pub v: Vec<ClusterEffect>,
    /// `E[u_jh]`, indexed `(j * g + h) * m + t`.
    pub u_mean: Vec<f64>,
    /// `Cov(u_jh)`, shared by all genes of component `h`.
    pub u_cov: Vec<DMatrix<f64>>,
    /// `Cov(u_jh, v_h)`.
    pub uv_cov: Vec<DMatrix<f64>>,
    /// `Cov(u_jh, u_kh)` for `j != k`.
    pub u_cross_cov: Vec<DMatrix<f64>>,
    g: usize,
    m: usize,
}

impl RandomEffectsPosterior {
    pub fn u(&self, j: usize, h: usize) -> &[f64] {
        let start = (j * self.g + h) * self.m;
        &self.u_mean[start..start + self.m]
    }
}

pub(crate) enum KernelKind {
    /// Dense inverse of `W`.
    Dense {
        w_inv: DMatrix<f64>,
        sigma2: f64,
        gene_effect: bool,
    },
    /// `theta^2 A(rho)`, evaluated through its tridiagonal inverse.
    Ar1 { theta2: f64, rho: f64 },
}

/// Per-component quantities reused across all genes in one pass.
pub(crate) struct Kernel {
    pub mean: Vec<f64>,
    pub logdet: f64,
    pub kind: KernelKind,
}

impl Kernel {
    pub fn m(&self) -> usize {
        self.mean.len()
    }

    /// Write `W^{-1} r` into `out` and return `r' W^{-1} r`.
    #[inline]
    pub fn whiten(&self, r: &[f64], out: &mut [f64]) -> f64 {
        match &self.kind {
            KernelKind::Dense { w_inv, .. } => {
                let m = r.len();
                let data = w_inv.as_slice();
                out.iter_mut().for_each(|o| *o = 0.0);
                for (k, &rk) in r.iter().enumerate() {
                    let col = &data[k * m..(k + 1) * m];
                    for (o, c) in out.iter_mut().zip(col) {
                        *o += c * rk;
                    }
                }
                r.iter().zip(out.iter()).map(|(a, b)| a * b).sum()
            }
            KernelKind::Ar1 { theta2, rho } => {
                QuadformStats::from_vector(r).eval(*rho) / theta2
            }
        }
    }

    pub fn w_inv_dense(&self) -> DMatrix<f64> {
        match &self.kind {
            KernelKind::Dense { w_inv, .. } => w_inv.clone(),
            KernelKind::Ar1 { theta2, rho } => {
                let spec = Ar1Spec::new(self.m(), *rho).expect("validated rho");
                crate::ar1::ar1_precision(&spec) / *theta2
            }
        }
    }
}

pub(crate) fn component_mean(x: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| (0..x.ncols()).map(|c| x[(i, c)] * beta[c]).sum())
        .collect()
}

/// Build per-component kernels. With `marginal`, the cluster-effect variance
/// is folded into `W` so the kernel is the full marginal covariance.
pub(crate) fn build_kernels(
    model: &MixtureModel,
    designs: &[DMatrix<f64>],
    marginal: bool,
) -> Result<Vec<Kernel>> {
    let family = model.family;
    model
        .components
        .iter()
        .zip(designs)
        .map(|(c, x)| {
            let m = x.nrows();
            let mean = component_mean(x, &c.beta);
            match family {
                CovarianceFamily::Ar1Residual if !marginal || c.d2 == 0.0 => {
                    if !(c.theta2 > 0.0) {
                        return Err(Error::NotPositiveDefinite);
                    }
                    let spec = Ar1Spec::new(m, c.rho)?;
                    let logdet = m as f64 * c.theta2.ln() + crate::ar1::ar1_logdet(&spec);
                    Ok(Kernel {
                        mean,
                        logdet,
                        kind: KernelKind::Ar1 {
                            theta2: c.theta2,
                            rho: c.rho,
                        },
                    })
                }
                _ => {
                    let gene_effect = family.has_ar1() && c.theta2 > 0.0;
                    let mut w = if gene_effect {
                        ar1_cov(&Ar1Spec::new(m, c.rho)?) * c.theta2
                    } else {
                        DMatrix::zeros(m, m)
                    };
                    let extra = c.sigma2 + if marginal { c.d2 } else { 0.0 };
                    for i in 0..m {
                        w[(i, i)] += extra;
                    }
                    let chol = w.cholesky().ok_or(Error::NotPositiveDefinite)?;
                    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                    Ok(Kernel {
                        mean,
                        logdet,
                        kind: KernelKind::Dense {
                            w_inv: chol.inverse(),
                            sigma2: extra,
                            gene_effect,
                        },
                    })
                }
            }
        })
        .collect()
}

/// Posterior of each shared cluster effect given responsibilities.
pub(crate) fn cluster_effects(
    data: &ProfileMatrix,
    model: &MixtureModel,
    kernels: &[Kernel],
    tau: &Responsibilities,
) -> Result<Vec<ClusterEffect>> {
    let m = data.m();
    if !model.family.cluster_effect() {
        return Ok(vec![ClusterEffect::absent(m); model.g()]);
    }
    let g = model.g();
    let mut out = Vec::with_capacity(g);
    for (h, kernel) in kernels.iter().enumerate() {
        let d2 = model.components[h].d2;
        if !(d2 > 0.0) {
            out.push(ClusterEffect::absent(m));
            continue;
        }
        let mut weight = 0.0;
        let mut rsum = vec![0.0; m];
        for j in 0..data.n() {
            let t = tau.get(j, h);
            if t == 0.0 {
                continue;
            }
            weight += t;
            for ((acc, y), mu) in rsum.iter_mut().zip(data.row(j)).zip(&kernel.mean) {
                *acc += t * (y - mu);
            }
        }
        let w_inv = kernel.w_inv_dense();
        let mut precision = &w_inv * weight;
        for i in 0..m {
            precision[(i, i)] += 1.0 / d2;
        }
        let chol = precision.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let logdet_precision = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let cov = chol.inverse();
        let mean = &cov * (&w_inv * DVector::from_vec(rsum));
        out.push(ClusterEffect {
            mean: mean.iter().copied().collect(),
            cov,
            logdet_cov: -logdet_precision,
            active: true,
        });
    }
    Ok(out)
}

/// One pass over all genes.
///
/// Computes the per-gene log-weights
/// `log p_h + log N(y_j; mu_h + E[v_h], W_h) - tr(W_h^{-1} Cov v_h) / 2`,
/// optionally replaces `tau` by their normalized values, optionally stores
/// `W_h^{-1}(y_j - mu_h - E[v_h])` in `cache`, and returns the EM objective
///
/// `sum_jh tau_jh (logw_jh - log tau_jh) + sum_h (E log p(v_h) + H(v_h))`.
///
/// When `tau` is updated, the first sum is the per-gene log-sum-exp. With no
/// cluster effect this is exactly the observed-data log-likelihood.
pub(crate) fn responsibility_pass(
    data: &ProfileMatrix,
    model: &MixtureModel,
    kernels: &[Kernel],
    effects: &[ClusterEffect],
    tau: &mut Responsibilities,
    update: bool,
    mut cache: Option<&mut [f64]>,
) -> Result<f64> {
    let g = model.g();
    let m = data.m();
    let mut shifted = Vec::with_capacity(g);
    let mut offsets = Vec::with_capacity(g);
    for h in 0..g {
        let k = &kernels[h];
        let e = &effects[h];
        shifted.push(
            k.mean
                .iter()
                .zip(&e.mean)
                .map(|(a, b)| a + b)
                .collect::<Vec<f64>>(),
        );
        let mut offset = -0.5 * (m as f64 * LN_2PI + k.logdet);
        if e.active {
            offset -= 0.5 * (k.w_inv_dense().component_mul(&e.cov)).sum();
        }
        let p = model.components[h].p;
        offsets.push(if p > 0.0 { p.ln() + offset } else { f64::NEG_INFINITY });
    }

    let mut objective = 0.0;
    let mut logw = vec![0.0; g];
    let mut r = vec![0.0; m];
    let mut scratch = vec![0.0; m];
    for j in 0..data.n() {
        let y = data.row(j);
        for h in 0..g {
            for ((ri, yi), si) in r.iter_mut().zip(y).zip(&shifted[h]) {
                *ri = yi - si;
            }
            let out: &mut [f64] = match cache.as_deref_mut() {
                Some(c) => &mut c[(j * g + h) * m..(j * g + h + 1) * m],
                None => &mut scratch,
            };
            let quad = kernels[h].whiten(&r, out);
            logw[h] = offsets[h] - 0.5 * quad;
        }
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::NonFinite(format!(
                "no component gives gene {} a finite density",
                data.gene_ids()[j]
            )));
        }
        let row = &mut tau.values_mut()[j * g..(j + 1) * g];
        if update {
            let total: f64 = logw.iter().map(|l| (l - max).exp()).sum();
            let lse = max + total.ln();
            for (t, l) in row.iter_mut().zip(&logw) {
                *t = (l - lse).exp();
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|t| *t /= s);
        }
        for (t, l) in row.iter().zip(&logw) {
            if *t > 0.0 {
                objective += t * (l - t.ln());
            }
        }
    }

    for (h, e) in effects.iter().enumerate() {
        if e.active {
            let d2 = model.components[h].d2;
            let mf = m as f64;
            objective += -0.5 * mf * (LN_2PI + d2.ln()) - 0.5 * e.second_moment() / d2
                + 0.5 * mf * (LN_2PI + 1.0)
                + 0.5 * e.logdet_cov;
        }
    }
    Ok(objective)
}

/// Expected sufficient statistics of the complete-data log-likelihood for
/// one component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStats {
    /// `n_h = sum_j tau_jh`.
    pub weight: f64,
    /// `sum_j tau_jh z_j`; `z_j = y_j - E[u_jh] - E[v_h]`, or `y_j` for the
    /// AR(1)-residual family.
    pub target_sum: Vec<f64>,
    /// `sum_j tau_jh |z_j|^2`.
    pub target_sq: f64,
    /// `sum_j tau_jh stats(y_j)` (AR(1)-residual family only).
    pub target_quad: QuadformStats,
    /// `n_h trace Cov(u_jh + v_h)`.
    pub residual_trace: f64,
    /// Statistics of `sum_j tau_jh E[u_jh u_jh']`.
    pub gene_effect: QuadformStats,
    /// `E[v_h' v_h]`.
    pub cluster_effect_sq: f64,
}

pub(crate) fn stats_from_cache(
    data: &ProfileMatrix,
    model: &MixtureModel,
    kernels: &[Kernel],
    effects: &[ClusterEffect],
    tau: &Responsibilities,
    cache: &[f64],
) -> Vec<ComponentStats> {
    let g = model.g();
    let m = data.m();
    let mut out = Vec::with_capacity(g);
    let mut z = vec![0.0; m];
    let mut u = vec![0.0; m];
    for h in 0..g {
        let kernel = &kernels[h];
        let effect = &effects[h];
        let mut st = ComponentStats {
            weight: 0.0,
            target_sum: vec![0.0; m],
            target_sq: 0.0,
            target_quad: QuadformStats::default(),
            residual_trace: 0.0,
            gene_effect: QuadformStats::default(),
            cluster_effect_sq: if effect.active { effect.second_moment() } else { 0.0 },
        };
        match &kernel.kind {
            KernelKind::Ar1 { .. } => {
                for j in 0..data.n() {
                    let t = tau.get(j, h);
                    if t == 0.0 {
                        continue;
                    }
                    let y = data.row(j);
                    st.weight += t;
                    for (acc, yi) in st.target_sum.iter_mut().zip(y) {
                        *acc += t * yi;
                    }
                    st.target_sq += t * y.iter().map(|v| v * v).sum::<f64>();
                    crate::ar1::accumulate_vector_stats(&mut st.target_quad, y, t);
                }
            }
            KernelKind::Dense {
                w_inv,
                sigma2,
                gene_effect,
            } => {
                for j in 0..data.n() {
                    let t = tau.get(j, h);
                    if t == 0.0 {
                        continue;
                    }
                    st.weight += t;
                    let y = data.row(j);
                    let w = &cache[(j * g + h) * m..(j * g + h + 1) * m];
                    if *gene_effect {
                        // E[u] = r - sigma^2 W^{-1} r with r = y - mu - E[v], so z = mu + sigma^2 W^{-1} r.
                        for i in 0..m {
                            z[i] = kernel.mean[i] + sigma2 * w[i];
                            u[i] = y[i] - effect.mean[i] - z[i];
                        }
                        crate::ar1::accumulate_vector_stats(&mut st.gene_effect, &u, t);
                    } else {
                        for i in 0..m {
                            z[i] = y[i] - effect.mean[i];
                        }
                    }
                    for (acc, zi) in st.target_sum.iter_mut().zip(&z) {
                        *acc += t * zi;
                    }
                    st.target_sq += t * z.iter().map(|v| v * v).sum::<f64>();
                }
                let (u_cov, eps_cov) = posterior_covariances(w_inv, *sigma2, *gene_effect, effect);
                if let Some(u_cov) = u_cov {
                    st.gene_effect
                        .add_scaled(&QuadformStats::from_matrix(&u_cov), st.weight);
                }
                st.residual_trace = st.weight * eps_cov.trace();
            }
        }
        out.push(st);
    }
    out
}

/// `(Cov(u), Cov(u + v))` for one component; `Cov(u)` is `None` without a
/// gene effect.
fn posterior_covariances(
    w_inv: &DMatrix<f64>,
    sigma2: f64,
    gene_effect: bool,
    effect: &ClusterEffect,
) -> (Option<DMatrix<f64>>, DMatrix<f64>) {
    let m = w_inv.nrows();
    if !gene_effect {
        let eps = if effect.active {
            effect.cov.clone()
        } else {
            DMatrix::zeros(m, m)
        };
        return (None, eps);
    }
    // Cov(u | y, v) = sigma^2 I - sigma^4 W^{-1}
    let mut cu = w_inv * (-sigma2 * sigma2);
    for i in 0..m {
        cu[(i, i)] += sigma2;
    }
    if !effect.active {
        return (Some(cu.clone()), cu);
    }
    // B = I - sigma^2 W^{-1}; u + v shifts by (I - B) v = sigma^2 W^{-1} v.
    let mut b = w_inv * (-sigma2);
    for i in 0..m {
        b[(i, i)] += 1.0;
    }
    let b_sigma = &b * &effect.cov;
    let u_cov = &cu + &b_sigma * b.transpose();
    let iw = w_inv * sigma2;
    let eps_cov = &cu + &iw * &effect.cov * iw.transpose();
    (Some(u_cov), eps_cov)
}

pub(crate) fn designs_for(data: &ProfileMatrix, model: &MixtureModel) -> Result<Vec<DMatrix<f64>>> {
    model
        .components
        .iter()
        .map(|c| {
            crate::fourier::fourier_design(&crate::fourier::DesignSpec::new(
                data.times().to_vec(),
                model.order,
                c.omega,
            )?)
        })
        .collect()
}

fn check_inputs(data: &ProfileMatrix, model: &MixtureModel) -> Result<()> {
    model.validate()?;
    if data.n() == 0 {
        return Err(Error::Dimension("no genes".into()));
    }
    Ok(())
}

/// Responsibilities under the marginal component densities, with the
/// cluster effect integrated out of each gene separately.
pub fn e_step_responsibilities(data: &ProfileMatrix, model: &MixtureModel) -> Result<Responsibilities> {
    check_inputs(data, model)?;
    let designs = designs_for(data, model)?;
    let kernels = build_kernels(model, &designs, true)?;
    let effects = vec![ClusterEffect::absent(data.m()); model.g()];
    let mut tau = Responsibilities::new(vec![0.0; data.n() * model.g()], model.g())?;
    responsibility_pass(data, model, &kernels, &effects, &mut tau, true, None)?;
    Ok(tau)
}

/// Responsibilities given the posterior of the shared cluster effects.
/// Returns them with the EM objective.
pub fn conditional_responsibilities(
    data: &ProfileMatrix,
    model: &MixtureModel,
    effects: &[ClusterEffect],
) -> Result<(Responsibilities, f64)> {
    check_inputs(data, model)?;
    let designs = designs_for(data, model)?;
    let kernels = build_kernels(model, &designs, false)?;
    let mut tau = Responsibilities::new(vec![0.0; data.n() * model.g()], model.g())?;
    let objective = responsibility_pass(data, model, &kernels, effects, &mut tau, true, None)?;
    Ok((tau, objective))
}

/// Posterior means and covariances of the cluster and gene effects.
pub fn e_step_random_effects(
    data: &ProfileMatrix,
    model: &MixtureModel,
    tau: &Responsibilities,
) -> Result<RandomEffectsPosterior> {
    check_inputs(data, model)?;
    if tau.n() != data.n() || tau.g() != model.g() {
        return Err(Error::Dimension("responsibilities do not match data and model".into()));
    }
    let designs = designs_for(data, model)?;
    let kernels = build_kernels(model, &designs, false)?;
    let effects = cluster_effects(data, model, &kernels, tau)?;
    let mut cache = vec![0.0; data.n() * model.g() * data.m()];
    let mut tau_copy = tau.clone();
    responsibility_pass(data, model, &kernels, &effects, &mut tau_copy, false, Some(&mut cache))?;
    Ok(assemble_posterior(data, model, &kernels, effects, &cache))
}

pub(crate) fn assemble_posterior(
    data: &ProfileMatrix,
    model: &MixtureModel,
    kernels: &[Kernel],
    effects: Vec<ClusterEffect>,
    cache: &[f64],
) -> RandomEffectsPosterior {
    let g = model.g();
    let m = data.m();
    let mut u_mean = vec![0.0; data.n() * g * m];
    let mut u_cov = Vec::with_capacity(g);
    let mut uv_cov = Vec::with_capacity(g);
    let mut u_cross_cov = Vec::with_capacity(g);
    for h in 0..g {
        let kernel = &kernels[h];
        let effect = &effects[h];
        match &kernel.kind {
            KernelKind::Dense {
                w_inv,
                sigma2,
                gene_effect: true,
            } => {
                for j in 0..data.n() {
                    let y = data.row(j);
                    let w = &cache[(j * g + h) * m..(j * g + h + 1) * m];
                    let out = &mut u_mean[(j * g + h) * m..(j * g + h + 1) * m];
                    for i in 0..m {
                        out[i] = y[i] - kernel.mean[i] - effect.mean[i] - sigma2 * w[i];
                    }
                }
                let (cov, _) = posterior_covariances(w_inv, *sigma2, true, effect);
                let mut b = w_inv * (-sigma2);
                for i in 0..m {
                    b[(i, i)] += 1.0;
                }
                let b_sigma = &b * &effect.cov;
                u_cross_cov.push(&b_sigma * b.transpose());
                uv_cov.push(-b_sigma);
                u_cov.push(cov.expect("gene effect active"));
            }
            _ => {
                u_cov.push(DMatrix::zeros(m, m));
                uv_cov.push(DMatrix::zeros(m, m));
                u_cross_cov.push(DMatrix::zeros(m, m));
            }
        }
    }
    RandomEffectsPosterior {
        v: effects,
        u_mean,
        u_cov,
        uv_cov,
        u_cross_cov,
        g,
        m,
    }
}

/// Expected complete-data sufficient statistics under the current model.
pub fn sufficient_statistics(
    data: &ProfileMatrix,
    model: &MixtureModel,
    tau: &Responsibilities,
) -> Result<Vec<ComponentStats>> {
    check_inputs(data, model)?;
    let designs = designs_for(data, model)?;
    let kernels = build_kernels(model, &designs, false)?;
    let effects = cluster_effects(data, model, &kernels, tau)?;
    let mut cache = vec![0.0; data.n() * model.g() * data.m()];
    let mut tau_copy = tau.clone();
    responsibility_pass(data, model, &kernels, &effects, &mut tau_copy, false, Some(&mut cache))?;
    Ok(stats_from_cache(data, model, &kernels, &effects, tau, &cache))
}
