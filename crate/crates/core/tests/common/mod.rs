//! Independent oracles shared by the integration tests and the acceptance
//! suite. Everything here is computed densely from definitions, never from
//! the library's own shortcuts.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tcmix_core::fourier::{fourier_design, DesignSpec};
use tcmix_core::model::{ComponentParams, MixtureModel, ModelKind, ProfileMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense AR(1) covariance straight from its entry formula.
pub fn dense_ar1(m: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| rho.powi((i as i32 - j as i32).abs()) / (1.0 - rho * rho))
}

pub fn design(times: &[f64], omega: f64) -> DMatrix<f64> {
    fourier_design(&DesignSpec::new(times.to_vec(), 1, omega).unwrap()).unwrap()
}

pub fn random_component(rng: &mut ChaCha8Rng, p: f64, omega: f64) -> ComponentParams {
    ComponentParams {
        p,
        beta: (0..3).map(|_| rng.random_range(-1.5..1.5)).collect(),
        theta2: rng.random_range(0.2..1.0),
        rho: rng.random_range(-0.8..0.8),
        sigma2: rng.random_range(0.1..0.8),
        d2: rng.random_range(0.05..0.6),
        omega,
    }
}

/// A random model with `g` components and noise drawn around it.
pub fn random_instance(
    seed: u64,
    n: usize,
    m: usize,
    g: usize,
    kind: ModelKind,
) -> (ProfileMatrix, MixtureModel) {
    let mut r = rng(seed);
    let raw: Vec<f64> = (0..g).map(|_| r.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let components: Vec<ComponentParams> = raw
        .iter()
        .enumerate()
        .map(|(h, w)| random_component(&mut r, w / total, 4.0 + 3.0 * h as f64))
        .collect();
    let mut model = MixtureModel {
        components,
        order: 1,
        family: kind.family(),
    };
    model.canonicalize();
    let times: Vec<f64> = (0..m).map(|t| t as f64).collect();
    let mut rows = Vec::with_capacity(n);
    for j in 0..n {
        let c = &model.components[j % g];
        let mean = design(&times, c.omega) * DVector::from_column_slice(&c.beta);
        rows.push(
            mean.iter()
                .map(|mu| mu + r.sample::<f64, _>(StandardNormal))
                .collect::<Vec<f64>>(),
        );
    }
    (ProfileMatrix::from_rows(&rows, times).unwrap(), model)
}

/// Exact posterior of the latent effects for a single-component model,
/// by conditioning the joint Gaussian of `(u_1, ..., u_n, v, y_1, ..., y_n)`.
pub struct JointPosterior {
    pub v_mean: DVector<f64>,
    pub v_cov: DMatrix<f64>,
    pub u_mean: Vec<DVector<f64>>,
    /// Cov(u_j) (same for every j).
    pub u_cov: Vec<DMatrix<f64>>,
    /// Cov(u_j, v).
    pub uv_cov: Vec<DMatrix<f64>>,
    /// Cov(u_0, u_1).
    pub u01_cov: DMatrix<f64>,
}

pub fn joint_posterior(data: &ProfileMatrix, c: &ComponentParams) -> JointPosterior {
    let n = data.n();
    let m = data.m();
    let dim = (n + 1) * m;
    let prior_u = dense_ar1(m, c.rho) * c.theta2;
    let mut prior = DMatrix::zeros(dim, dim);
    for j in 0..n {
        prior.view_mut((j * m, j * m), (m, m)).copy_from(&prior_u);
    }
    for i in 0..m {
        prior[(n * m + i, n * m + i)] = c.d2;
    }
    // y_j = mu + u_j + v + eps_j
    let mut load = DMatrix::zeros(n * m, dim);
    for j in 0..n {
        for i in 0..m {
            load[(j * m + i, j * m + i)] = 1.0;
            load[(j * m + i, n * m + i)] = 1.0;
        }
    }
    let cov_zy = &prior * load.transpose();
    let mut cov_yy = &load * &cov_zy;
    for i in 0..n * m {
        cov_yy[(i, i)] += c.sigma2;
    }
    let inv = cov_yy.try_inverse().expect("observation covariance invertible");
    let mean = design(data.times(), c.omega) * DVector::from_column_slice(&c.beta);
    let mut resid = DVector::zeros(n * m);
    for j in 0..n {
        for i in 0..m {
            resid[j * m + i] = data.row(j)[i] - mean[i];
        }
    }
    let gain = &cov_zy * &inv;
    let post_mean = &gain * resid;
    let post_cov = &prior - &gain * cov_zy.transpose();
    let block = |a: usize, b: usize| post_cov.view((a * m, b * m), (m, m)).into_owned();
    JointPosterior {
        v_mean: post_mean.rows(n * m, m).into_owned(),
        v_cov: block(n, n),
        u_mean: (0..n).map(|j| post_mean.rows(j * m, m).into_owned()).collect(),
        u_cov: (0..n).map(|j| block(j, j)).collect(),
        uv_cov: (0..n).map(|j| block(j, n)).collect(),
        u01_cov: if n > 1 { block(0, 1) } else { DMatrix::zeros(m, m) },
    }
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

/// Every set partition of `n` items into at most `k` blocks, as restricted
/// growth strings.
pub fn set_partitions(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, n: usize, k: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let next = prefix.iter().max().map_or(0, |&b| b + 1);
        for b in 0..=next.min(k - 1) {
            prefix.push(b);
            grow(prefix, n, k, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::new(), n, k, &mut out);
    out
}

/// Rand index by enumerating every unordered pair.
pub fn rand_by_pairs(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut agree, mut total) = (0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            total += 1;
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1;
            }
        }
    }
    agree as f64 / total as f64
}

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index from an explicitly built contingency table.
pub fn adjusted_rand_by_table(a: &[usize], b: &[usize]) -> f64 {
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| choose2(table.iter().map(|r| r[j]).sum())).sum();
    let total = choose2(a.len() as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Error rate by trying every injective relabeling of `pred` blocks.
pub fn error_rate_by_permutation(pred: &[usize], truth: &[usize]) -> f64 {
    let kp = pred.iter().max().unwrap() + 1;
    let kt = truth.iter().max().unwrap() + 1;
    let size = kp.max(kt);
    let mut best = 0usize;
    let mut perm: Vec<usize> = (0..size).collect();
    permute(&mut perm, 0, &mut |p| {
        let hits = pred.iter().zip(truth).filter(|(&x, &y)| p[x] == y).count();
        best = best.max(hits);
    });
    1.0 - best as f64 / pred.len() as f64
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}
