//! M-step: closed-form maximizers of the expected complete-data
//! log-likelihood, one block of parameters at a time.

use nalgebra::{DMatrix, DVector};

use crate::ar1::{maximize_profile_rho, QuadformStats};
use crate::em::config::FitConfig;
use crate::em::estep::ComponentStats;
use crate::error::{Error, Result};
use crate::model::{ComponentParams, CovarianceFamily, MixtureModel, LN_2PI};

fn xt_vec(x: &DMatrix<f64>, v: &[f64]) -> DVector<f64> {
    x.transpose() * DVector::from_column_slice(v)
}

fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>, component: usize) -> Result<DVector<f64>> {
    let chol = a.cholesky().ok_or(Error::RankDeficient(component))?;
    Ok(chol.solve(b))
}

/// Sum of squared residuals `sum_j tau_jh |z_j - X beta|^2`, expanded from
/// the statistics.
fn expected_sq_error(st: &ComponentStats, x: &DMatrix<f64>, beta: &[f64]) -> f64 {
    let b = DVector::from_column_slice(beta);
    let xb = x * &b;
    let cross: f64 = xb.iter().zip(&st.target_sum).map(|(a, z)| a * z).sum();
    st.target_sq - 2.0 * cross + st.weight * xb.norm_squared() + st.residual_trace
}

/// Statistics of `sum_j tau_jh (y_j - mu)(y_j - mu)'` for the AR(1)-residual family.
fn residual_quad(st: &ComponentStats, mean: &[f64]) -> QuadformStats {
    let mut out = st.target_quad;
    out.add_scaled(&QuadformStats::from_cross(&st.target_sum, mean), -1.0);
    out.add_scaled(&QuadformStats::from_vector(mean), st.weight);
    out
}

fn mean_of(x: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    (x * DVector::from_column_slice(beta)).iter().copied().collect()
}

/// Updated model from expected statistics.
///
/// `previous` supplies the current `rho` (for the AR(1)-residual family the
/// regression step is generalized least squares at that `rho`, then `theta^2`
/// and `rho` are updated at the new coefficients) and the periods.
pub fn m_step(
    stats: &[ComponentStats],
    previous: &MixtureModel,
    designs: &[DMatrix<f64>],
    config: &FitConfig,
) -> Result<MixtureModel> {
    let g = previous.g();
    if stats.len() != g || designs.len() != g {
        return Err(Error::Dimension("statistics do not match the model".into()));
    }
    let n: f64 = stats.iter().map(|s| s.weight).sum();
    let threshold = (g as f64 * f64::EPSILON * n).max(1e-12);
    let floor = config.variance_floor;
    let family = previous.family;
    let mut components = Vec::with_capacity(g);
    for (h, (st, x)) in stats.iter().zip(designs).enumerate() {
        if !(st.weight >= threshold) {
            return Err(Error::DegenerateComponent {
                component: h,
                weight: st.weight,
            });
        }
        let m = x.nrows();
        let mf = m as f64;
        let prev = &previous.components[h];
        let mut c = ComponentParams {
            p: st.weight / n,
            beta: Vec::new(),
            theta2: 0.0,
            rho: 0.0,
            sigma2: 0.0,
            d2: 0.0,
            omega: prev.omega,
        };
        match family {
            CovarianceFamily::RandomEffects {
                gene_effect,
                cluster_effect,
            } => {
                let xtx = x.transpose() * x * st.weight;
                let beta = solve_spd(xtx, &xt_vec(x, &st.target_sum), h)?;
                c.beta = beta.iter().copied().collect();
                c.sigma2 = (expected_sq_error(st, x, &c.beta) / (mf * st.weight)).max(floor);
                if gene_effect {
                    c.rho = match config.fixed_rho {
                        Some(r) => r,
                        None => maximize_profile_rho(&st.gene_effect, m, config.rho_bound, prev.rho),
                    };
                    c.theta2 = (st.gene_effect.eval(c.rho) / (mf * st.weight)).max(floor);
                }
                if cluster_effect {
                    c.d2 = (st.cluster_effect_sq / mf).max(floor);
                }
            }
            CovarianceFamily::Ar1Residual => {
                let spec = crate::ar1::Ar1Spec::new(m, prev.rho)?;
                let precision = crate::ar1::ar1_precision(&spec);
                let xtp = x.transpose() * &precision;
                let lhs = &xtp * x * st.weight;
                let rhs = &xtp * DVector::from_column_slice(&st.target_sum);
                let beta = solve_spd(lhs, &rhs, h)?;
                c.beta = beta.iter().copied().collect();
                let quad = residual_quad(st, &mean_of(x, &c.beta));
                c.rho = match config.fixed_rho {
                    Some(r) => r,
                    None => maximize_profile_rho(&quad, m, config.rho_bound, prev.rho),
                };
                c.theta2 = (quad.eval(c.rho) / (mf * st.weight)).max(floor);
            }
        }
        components.push(c);
    }
    Ok(MixtureModel {
        components,
        order: previous.order,
        family,
    })
}

/// Expected complete-data log-likelihood `E[l1 + l2 + l3 + l4]` at `model`,
/// from statistics gathered under the previous parameters.
pub fn expected_complete_loglik(
    model: &MixtureModel,
    stats: &[ComponentStats],
    designs: &[DMatrix<f64>],
) -> f64 {
    let mut total = 0.0;
    for ((c, st), x) in model.components.iter().zip(stats).zip(designs) {
        let m = x.nrows() as f64;
        let w = st.weight;
        if w == 0.0 {
            continue;
        }
        total += w * c.p.ln();
        match model.family {
            CovarianceFamily::RandomEffects {
                gene_effect,
                cluster_effect,
            } => {
                let sq = expected_sq_error(st, x, &c.beta);
                total += -0.5 * (w * m * (LN_2PI + c.sigma2.ln()) + sq / c.sigma2);
                if gene_effect {
                    total += ar1_block(&st.gene_effect, w, m, c.theta2, c.rho);
                }
                if cluster_effect {
                    total += -0.5 * w * (m * (LN_2PI + c.d2.ln()) + st.cluster_effect_sq / c.d2);
                }
            }
            CovarianceFamily::Ar1Residual => {
                let quad = residual_quad(st, &mean_of(x, &c.beta));
                total += ar1_block(&quad, w, m, c.theta2, c.rho);
            }
        }
    }
    total
}

/// `-1/2 [w m log(2 pi theta^2) + w log|A| + tr(A^{-1} M) / theta^2]`.
fn ar1_block(quad: &QuadformStats, w: f64, m: f64, theta2: f64, rho: f64) -> f64 {
    let logdet_a = -(1.0 - rho * rho).ln();
    -0.5 * (w * m * (LN_2PI + theta2.ln()) + w * logdet_a + quad.eval(rho) / theta2)
}
