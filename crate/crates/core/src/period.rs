//! Exhaustive search over per-component period tuples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{fit, FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::model::ProfileMatrix;

pub const DEFAULT_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PeriodGrid {
    /// One candidate list; every component takes the same period.
    Shared(Vec<f64>),
    /// One candidate list per component; the grid is their product.
    PerComponent(Vec<Vec<f64>>),
}

impl PeriodGrid {
    fn lists(&self) -> Vec<&[f64]> {
        match self {
            Self::Shared(c) => vec![c.as_slice()],
            Self::PerComponent(c) => c.iter().map(Vec::as_slice).collect(),
        }
    }

    /// Number of tuples, saturating.
    pub fn size(&self) -> usize {
        self.lists()
            .iter()
            .fold(1usize, |acc, l| acc.saturating_mul(l.len()))
    }

    /// All tuples in lexicographic order, for `g` components.
    pub fn tuples(&self, g: usize, cap: usize) -> Result<Vec<Vec<f64>>> {
        let lists = self.lists();
        if lists.iter().any(|l| l.is_empty()) {
            return Err(Error::Invalid("empty period grid".into()));
        }
        if lists.iter().flat_map(|l| l.iter()).any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Invalid("candidate periods must be positive".into()));
        }
        if let Self::PerComponent(c) = self {
            if c.len() != g {
                return Err(Error::Invalid(format!(
                    "{} candidate lists for {g} components",
                    c.len()
                )));
            }
        }
        let size = self.size();
        if size > cap {
            return Err(Error::Invalid(format!(
                "period grid has {size} tuples, above the cap of {cap}; raise the cap to run it"
            )));
        }
        let mut sorted: Vec<Vec<f64>> = lists.iter().map(|l| l.to_vec()).collect();
        for l in &mut sorted {
            l.sort_by(f64::total_cmp);
            l.dedup();
        }
        let mut out: Vec<Vec<f64>> = vec![Vec::new()];
        for l in &sorted {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    l.iter().map(move |&w| {
                        let mut t = prefix.clone();
                        t.push(w);
                        t
                    })
                })
                .collect();
        }
        if let Self::Shared(_) = self {
            for t in &mut out {
                *t = vec![t[0]; g];
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub periods: Vec<f64>,
    /// Final EM objective, `None` if the fit failed.
    pub loglik: Option<f64>,
    pub converged: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best_periods: Vec<f64>,
    pub best: FitResult,
    pub scores: Vec<GridScore>,
}

/// Fit every tuple with the same initialization policy and seed and keep the
/// one with the highest final objective. Ties go to the lexicographically
/// smallest tuple.
pub fn grid_search(
    data: &ProfileMatrix,
    config: &FitConfig,
    grid: &PeriodGrid,
    cap: usize,
) -> Result<GridSearchResult> {
    let tuples = grid.tuples(config.g, cap)?;
    let fits: Vec<(Vec<f64>, Result<FitResult>)> = tuples
        .into_par_iter()
        .map(|periods| {
            let mut c = config.clone();
            c.omegas = periods.clone();
            let r = fit(data, &c);
            (periods, r)
        })
        .collect();

    let mut scores = Vec::with_capacity(fits.len());
    let mut best: Option<(Vec<f64>, FitResult)> = None;
    for (periods, r) in fits {
        match r {
            Ok(f) => {
                scores.push(GridScore {
                    periods: periods.clone(),
                    loglik: Some(f.loglik()),
                    converged: f.converged,
                    failure: None,
                });
                if best.as_ref().is_none_or(|(_, b)| f.loglik() > b.loglik()) {
                    best = Some((periods, f));
                }
            }
            Err(e) => scores.push(GridScore {
                periods,
                loglik: None,
                converged: false,
                failure: Some(e.to_string()),
            }),
        }
    }
    let (best_periods, best) = best.ok_or_else(|| {
        Error::Invalid(format!("all {} period tuples failed to fit", scores.len()))
    })?;
    Ok(GridSearchResult {
        best_periods,
        best,
        scores,
    })
}

/// Score table with one `omega_h` column per component.
pub fn write_scores<W: std::io::Write>(scores: &[GridScore], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let g = scores.first().map_or(0, |s| s.periods.len());
    let mut header: Vec<String> = (1..=g).map(|h| format!("omega_{h}")).collect();
    header.extend(["loglik", "converged", "failure"].map(String::from));
    w.write_record(&header)?;
    for s in scores {
        let mut row: Vec<String> = s.periods.iter().map(f64::to_string).collect();
        row.push(s.loglik.map(|l| l.to_string()).unwrap_or_default());
        row.push(s.converged.to_string());
        row.push(s.failure.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
