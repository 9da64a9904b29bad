//! Stationary AR(1) covariance algebra.
//!
//! `A(rho)` has entries `rho^|i-j| / (1 - rho^2)`. Its inverse is tridiagonal,
//! `(1 + rho^2) I - rho J - rho^2 K`, where `J` marks the first sub- and
//! super-diagonals and `K = e_1 e_1' + e_m e_m'`. For `m = 1` both endpoint
//! terms of `K` land on the single entry, so `K = [2]`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Dimension and correlation of an AR(1) covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Spec {
    m: usize,
    rho: f64,
}

impl Ar1Spec {
    pub fn new(m: usize, rho: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::Domain("AR(1) dimension must be at least 1".into()));
        }
        if !rho.is_finite() || rho.abs() >= 1.0 {
            return Err(Error::Domain(format!(
                "AR(1) correlation must satisfy |rho| < 1, got {rho}"
            )));
        }
        Ok(Self { m, rho })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// Dense `A(rho)`.
pub fn ar1_cov(spec: &Ar1Spec) -> DMatrix<f64> {
    let Ar1Spec { m, rho } = *spec;
    let scale = 1.0 / (1.0 - rho * rho);
    let mut powers = Vec::with_capacity(m);
    let mut r = 1.0;
    for _ in 0..m {
        powers.push(r * scale);
        r *= rho;
    }
    DMatrix::from_fn(m, m, |i, j| powers[i.abs_diff(j)])
}

/// Tridiagonal `A(rho)^{-1}` as a dense matrix.
pub fn ar1_precision(spec: &Ar1Spec) -> DMatrix<f64> {
    let Ar1Spec { m, rho } = *spec;
    let mut p = DMatrix::zeros(m, m);
    for i in 0..m {
        p[(i, i)] = 1.0 + rho * rho;
        if i + 1 < m {
            p[(i, i + 1)] = -rho;
            p[(i + 1, i)] = -rho;
        }
    }
    p[(0, 0)] -= rho * rho;
    p[(m - 1, m - 1)] -= rho * rho;
    p
}

/// `d A(rho)^{-1} / d rho = 2 rho I - J - 2 rho K`.
pub fn ar1_precision_derivative(spec: &Ar1Spec) -> DMatrix<f64> {
    let Ar1Spec { m, rho } = *spec;
    let mut d = DMatrix::zeros(m, m);
    for i in 0..m {
        d[(i, i)] = 2.0 * rho;
        if i + 1 < m {
            d[(i, i + 1)] = -1.0;
            d[(i + 1, i)] = -1.0;
        }
    }
    d[(0, 0)] -= 2.0 * rho;
    d[(m - 1, m - 1)] -= 2.0 * rho;
    d
}

/// `log det A(rho) = -log(1 - rho^2)`, for every `m`.
pub fn ar1_logdet(spec: &Ar1Spec) -> f64 {
    -(1.0 - spec.rho * spec.rho).ln()
}

/// `trace(dA^{-1}/drho * A) = -2 rho / (1 - rho^2)`.
pub fn ar1_trace_identity(spec: &Ar1Spec) -> f64 {
    -2.0 * spec.rho / (1.0 - spec.rho * spec.rho)
}

/// Sufficient statistics of a quadratic form against `A(rho)^{-1}`.
///
/// For a vector `u`, `s0 = sum u_t^2`, `s1 = 2 sum u_t u_{t+1}` and
/// `s2 = u_1^2 + u_m^2`, so that `u' A^{-1} u = (1+rho^2) s0 - rho s1 - rho^2 s2`.
/// The same decomposition applies to `trace(A^{-1} M)` for a symmetric `M`,
/// which is how second moments `E[u u']` enter the M-step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QuadformStats {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
}

impl QuadformStats {
    pub fn from_vector(u: &[f64]) -> Self {
        let m = u.len();
        if m == 0 {
            return Self::default();
        }
        let s0 = u.iter().map(|x| x * x).sum();
        let s1 = 2.0 * u.windows(2).map(|w| w[0] * w[1]).sum::<f64>();
        let s2 = u[0] * u[0] + u[m - 1] * u[m - 1];
        Self { s0, s1, s2 }
    }

    /// Statistics of the symmetric matrix `a b' + b a'`.
    pub fn from_cross(a: &[f64], b: &[f64]) -> Self {
        let m = a.len();
        debug_assert_eq!(m, b.len());
        if m == 0 {
            return Self::default();
        }
        let s0 = 2.0 * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let s1 = 2.0
            * (0..m.saturating_sub(1))
                .map(|t| a[t] * b[t + 1] + b[t] * a[t + 1])
                .sum::<f64>();
        let s2 = 2.0 * (a[0] * b[0] + a[m - 1] * b[m - 1]);
        Self { s0, s1, s2 }
    }

    /// Statistics of a symmetric matrix.
    pub fn from_matrix(mat: &DMatrix<f64>) -> Self {
        let m = mat.nrows();
        if m == 0 {
            return Self::default();
        }
        let s0 = mat.trace();
        let s1 = (0..m - 1)
            .map(|t| mat[(t, t + 1)] + mat[(t + 1, t)])
            .sum::<f64>();
        let s2 = mat[(0, 0)] + mat[(m - 1, m - 1)];
        Self { s0, s1, s2 }
    }

    /// `(1+rho^2) s0 - rho s1 - rho^2 s2`.
    pub fn eval(&self, rho: f64) -> f64 {
        (1.0 + rho * rho) * self.s0 - rho * self.s1 - rho * rho * self.s2
    }

    pub fn add_scaled(&mut self, other: &Self, w: f64) {
        self.s0 += w * other.s0;
        self.s1 += w * other.s1;
        self.s2 += w * other.s2;
    }

    pub fn scaled(&self, w: f64) -> Self {
        Self {
            s0: w * self.s0,
            s1: w * self.s1,
            s2: w * self.s2,
        }
    }
}

/// Accumulate `w * stats(u)` without allocating.
pub(crate) fn accumulate_vector_stats(acc: &mut QuadformStats, u: &[f64], w: f64) {
    let m = u.len();
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    for t in 0..m {
        s0 += u[t] * u[t];
        if t + 1 < m {
            s1 += u[t] * u[t + 1];
        }
    }
    acc.s0 += w * s0;
    acc.s1 += w * 2.0 * s1;
    acc.s2 += w * (u[0] * u[0] + u[m - 1] * u[m - 1]);
}

/// Maximizer of the profiled AR(1) objective.
///
/// With `Q(rho) = stats.eval(rho)`, the scale profiles out as
/// `theta^2(rho) = Q(rho) / (m n)` and the remaining objective is
/// `-m log Q(rho) + log(1 - rho^2)`. Its stationary points are roots of a
/// cubic; the cubic is split into monotone pieces at its critical points and
/// each sign change is bisected. `current` is always a candidate so the
/// returned value never scores below it.
pub fn maximize_profile_rho(stats: &QuadformStats, m: usize, bound: f64, current: f64) -> f64 {
    let mf = m as f64;
    let objective = |rho: f64| {
        let q = stats.eval(rho);
        if q <= 0.0 {
            f64::NEG_INFINITY
        } else {
            -mf * q.ln() + (1.0 - rho * rho).ln()
        }
    };
    let a = stats.s0 - stats.s2;
    let s1 = stats.s1;
    // h(rho) = c3 rho^3 + c2 rho^2 + c1 rho + c0, proportional to the derivative.
    let c3 = 2.0 * mf * a - 2.0 * a;
    let c2 = 2.0 * s1 - mf * s1;
    let c1 = -2.0 * mf * a - 2.0 * stats.s0;
    let c0 = mf * s1;
    let h = |r: f64| ((c3 * r + c2) * r + c1) * r + c0;

    let mut breaks = vec![-bound, bound];
    // h'(rho) = 3 c3 rho^2 + 2 c2 rho + c1
    let qa = 3.0 * c3;
    let qb = 2.0 * c2;
    let qc = c1;
    if qa.abs() > 1e-300 {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let q = -0.5 * (qb + qb.signum() * sq);
            for r in [q / qa, if q != 0.0 { qc / q } else { f64::NAN }] {
                if r.is_finite() && r > -bound && r < bound {
                    breaks.push(r);
                }
            }
        }
    } else if qb.abs() > 1e-300 {
        let r = -qc / qb;
        if r > -bound && r < bound {
            breaks.push(r);
        }
    }
    breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());

    let clamp_current = current.clamp(-bound, bound);
    let mut best = clamp_current;
    let mut best_val = objective(clamp_current);
    let mut consider = |r: f64| {
        let v = objective(r);
        if v > best_val {
            best_val = v;
            best = r;
        }
    };
    consider(-bound);
    consider(bound);
    for w in breaks.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        let (mut hlo, hhi) = (h(lo), h(hi));
        if hlo == 0.0 {
            consider(lo);
            continue;
        }
        if hlo.signum() == hhi.signum() {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let hm = h(mid);
            if hm.signum() == hlo.signum() {
                lo = mid;
                hlo = hm;
            } else {
                hi = mid;
            }
        }
        consider(0.5 * (lo + hi));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_invalid_specs() {
        assert!(Ar1Spec::new(0, 0.1).is_err());
        assert!(Ar1Spec::new(3, 1.0).is_err());
        assert!(Ar1Spec::new(3, -1.2).is_err());
        assert!(Ar1Spec::new(3, f64::NAN).is_err());
    }

    #[test]
    fn covariance_examples() {
        let a = ar1_cov(&Ar1Spec::new(3, 0.0).unwrap());
        assert_eq!(a, DMatrix::identity(3, 3));

        let a = ar1_cov(&Ar1Spec::new(2, 0.5).unwrap());
        assert_abs_diff_eq!(a[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(a[(0, 1)], 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(a[(1, 0)], 2.0 / 3.0, epsilon = 1e-14);

        let a = ar1_cov(&Ar1Spec::new(4, -0.8).unwrap());
        assert_abs_diff_eq!(a[(0, 3)], (-0.8f64).powi(3) / 0.36, epsilon = 1e-12);
        assert!(a[(0, 1)] < 0.0 && a[(0, 2)] > 0.0 && a[(0, 3)] < 0.0);
    }

    #[test]
    fn precision_examples() {
        let p = ar1_precision(&Ar1Spec::new(3, 0.0).unwrap());
        assert_eq!(p, DMatrix::identity(3, 3));

        let p = ar1_precision(&Ar1Spec::new(3, 0.5).unwrap());
        let expected =
            DMatrix::from_row_slice(3, 3, &[1.0, -0.5, 0.0, -0.5, 1.25, -0.5, 0.0, -0.5, 1.0]);
        assert_abs_diff_eq!(p, expected, epsilon = 1e-14);

        let p = ar1_precision(&Ar1Spec::new(2, 0.9).unwrap());
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, -0.9, -0.9, 1.0]);
        assert_abs_diff_eq!(p, expected, epsilon = 1e-14);
    }

    #[test]
    fn single_time_point_degenerates() {
        let spec = Ar1Spec::new(1, 0.7).unwrap();
        let a = ar1_cov(&spec);
        let p = ar1_precision(&spec);
        assert_abs_diff_eq!(a[(0, 0)] * p[(0, 0)], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(
            ar1_trace_identity(&spec),
            (ar1_precision_derivative(&spec) * a).trace(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn logdet_examples() {
        assert_eq!(ar1_logdet(&Ar1Spec::new(4, 0.0).unwrap()), 0.0);
        let l3 = ar1_logdet(&Ar1Spec::new(3, 0.5).unwrap());
        assert_abs_diff_eq!(l3, 0.287_682_072_451_780_9, epsilon = 1e-12);
        let dense = ar1_cov(&Ar1Spec::new(7, 0.5).unwrap()).determinant().ln();
        assert_abs_diff_eq!(dense, l3, epsilon = 1e-10);
    }

    #[test]
    fn quadform_examples() {
        assert_eq!(QuadformStats::from_vector(&[0.0; 4]), QuadformStats::default());
        let s = QuadformStats::from_vector(&[1.0, 1.0, 1.0]);
        assert_eq!((s.s0, s.s1, s.s2), (3.0, 4.0, 2.0));
        let s = QuadformStats::from_vector(&[1.0, -1.0]);
        assert_eq!((s.s0, s.s1, s.s2), (2.0, -2.0, 2.0));
        for rho in [-0.7, 0.0, 0.3, 0.9] {
            let u = nalgebra::DVector::from_vec(vec![1.0, -1.0]);
            let p = ar1_precision(&Ar1Spec::new(2, rho).unwrap());
            assert_abs_diff_eq!((u.transpose() * &p * &u)[0], s.eval(rho), epsilon = 1e-12);
        }
    }

    #[test]
    fn trace_identity_examples() {
        assert_eq!(ar1_trace_identity(&Ar1Spec::new(5, 0.0).unwrap()), 0.0);
        assert_abs_diff_eq!(
            ar1_trace_identity(&Ar1Spec::new(5, 0.6).unwrap()),
            -1.875,
            epsilon = 1e-12
        );
        let spec = Ar1Spec::new(3, -0.4).unwrap();
        let explicit = (ar1_precision_derivative(&spec) * ar1_cov(&spec)).trace();
        assert_abs_diff_eq!(explicit, 0.8 / 0.84, epsilon = 1e-12);
        assert_abs_diff_eq!(ar1_trace_identity(&spec), explicit, epsilon = 1e-12);
    }

    #[test]
    fn cross_and_matrix_stats_agree() {
        let a = [0.3, -1.2, 0.5, 2.0];
        let b = [1.1, 0.4, -0.7, 0.2];
        let va = nalgebra::DVector::from_column_slice(&a);
        let vb = nalgebra::DVector::from_column_slice(&b);
        let mat = &va * vb.transpose() + &vb * va.transpose();
        let s1 = QuadformStats::from_cross(&a, &b);
        let s2 = QuadformStats::from_matrix(&mat);
        assert_abs_diff_eq!(s1.s0, s2.s0, epsilon = 1e-12);
        assert_abs_diff_eq!(s1.s1, s2.s1, epsilon = 1e-12);
        assert_abs_diff_eq!(s1.s2, s2.s2, epsilon = 1e-12);
    }

    #[test]
    fn profile_rho_matches_dense_grid() {
        let u = [0.8, 1.1, 0.9, 0.2, -0.4, -0.9, -0.5, 0.1];
        let stats = QuadformStats::from_vector(&u);
        let m = u.len();
        let rho = maximize_profile_rho(&stats, m, 0.99, 0.0);
        let obj = |r: f64| -(m as f64) * stats.eval(r).ln() + (1.0 - r * r).ln();
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..=198_000 {
            let r = -0.99 + i as f64 * 1e-5;
            let v = obj(r);
            if v > best.0 {
                best = (v, r);
            }
        }
        assert!((rho - best.1).abs() < 2e-5, "{rho} vs {}", best.1);
        assert!(obj(rho) >= best.0 - 1e-12);
    }
}
