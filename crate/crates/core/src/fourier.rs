//! Fourier regression basis for periodic mean curves.
//!
//! Columns are ordered intercept, then `cos`, `sin` per ascending harmonic,
//! matching coefficient storage `(a0, a1, b1, ..., ak, bk)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub times: Vec<f64>,
    pub order: usize,
    pub period: f64,
}

impl DesignSpec {
    pub fn new(times: Vec<f64>, order: usize, period: f64) -> Result<Self> {
        let spec = Self {
            times,
            order,
            period,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) || !self.period.is_finite() {
            return Err(Error::Domain(format!(
                "period must be positive, got {}",
                self.period
            )));
        }
        if self.order == 0 {
            return Err(Error::Domain("Fourier order must be at least 1".into()));
        }
        if self.times.is_empty() {
            return Err(Error::Domain("design needs at least one time point".into()));
        }
        Ok(())
    }
}

/// Number of regression coefficients for a Fourier order.
pub fn n_coefficients(order: usize) -> usize {
    2 * order + 1
}

pub fn fourier_design(spec: &DesignSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let m = spec.times.len();
    let q = n_coefficients(spec.order);
    let mut x = DMatrix::zeros(m, q);
    for (i, &t) in spec.times.iter().enumerate() {
        x[(i, 0)] = 1.0;
        for j in 1..=spec.order {
            let angle = 2.0 * PI * j as f64 * t / spec.period;
            x[(i, 2 * j - 1)] = angle.cos();
            x[(i, 2 * j)] = angle.sin();
        }
    }
    Ok(x)
}

/// Evaluate the mean curve `X beta` at arbitrary times.
pub fn evaluate_curve(times: &[f64], order: usize, period: f64, beta: &[f64]) -> Result<Vec<f64>> {
    let x = fourier_design(&DesignSpec::new(times.to_vec(), order, period)?)?;
    if beta.len() != x.ncols() {
        return Err(Error::Dimension(format!(
            "expected {} coefficients, got {}",
            x.ncols(),
            beta.len()
        )));
    }
    Ok((0..x.nrows())
        .map(|i| (0..x.ncols()).map(|c| x[(i, c)] * beta[c]).sum())
        .collect())
}
