//! Expression matrix loading, normalization and result files.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::em::{FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::fourier::{fourier_design, DesignSpec};
use crate::model::{ComponentParams, CovarianceFamily, ProfileMatrix};

/// Where time coordinates come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSource {
    /// Parse each data column header after dropping any non-numeric prefix
    /// (`t10` -> 10).
    Header,
    List(Vec<f64>),
}

/// Normalization steps. Whatever is enabled runs in the fixed order
/// log2, columns, rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Normalization {
    pub log2: bool,
    pub columns: bool,
    pub rows: bool,
}

impl Normalization {
    pub fn is_identity(&self) -> bool {
        !(self.log2 || self.columns || self.rows)
    }

    /// Applied steps in order, for output metadata.
    pub fn steps(&self) -> Vec<&'static str> {
        let mut s = Vec::new();
        if self.log2 {
            s.push("log2");
        }
        if self.columns {
            s.push("standardize-columns");
        }
        if self.rows {
            s.push("standardize-rows");
        }
        s
    }
}

fn default_delimiter() -> char {
    ','
}

fn default_true() -> bool {
    true
}

fn default_times() -> TimeSource {
    TimeSource::Header
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub path: PathBuf,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_true")]
    pub has_header: bool,
    #[serde(default = "default_times")]
    pub times: TimeSource,
    /// 0-based column holding gene ids; ids are generated when absent.
    #[serde(default)]
    pub id_column: Option<usize>,
    /// 0-based column holding reference labels.
    #[serde(default)]
    pub label_column: Option<usize>,
    /// Total column count every row must have.
    #[serde(default)]
    pub expected_columns: Option<usize>,
    #[serde(default)]
    pub normalization: Normalization,
}

impl DatasetManifest {
    /// Comma-separated file with a header of times and gene ids in the
    /// first column.
    pub fn csv(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            delimiter: ',',
            has_header: true,
            times: TimeSource::Header,
            id_column: Some(0),
            label_column: None,
            expected_columns: None,
            normalization: Normalization::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedProfiles {
    /// Profiles after normalization.
    pub data: ProfileMatrix,
    /// Raw label strings, one per gene, when a label column is declared.
    pub labels: Option<Vec<String>>,
}

fn parse_time(header: &str) -> Option<f64> {
    let start = header
        .find(|c: char| c.is_ascii_digit() || c == '-' || c == '+' || c == '.')
        .unwrap_or(header.len());
    header[start..].trim().parse().ok()
}

/// Parse profiles from any reader. Row and column numbers in errors are
/// 1-based positions in the file, header included.
pub fn parse_profiles<R: Read>(reader: R, manifest: &DatasetManifest) -> Result<LoadedProfiles> {
    if !manifest.delimiter.is_ascii() {
        return Err(Error::Invalid("delimiter must be an ASCII character".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(manifest.delimiter as u8)
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();

    let special: Vec<usize> = [manifest.id_column, manifest.label_column]
        .into_iter()
        .flatten()
        .collect();
    let header = if manifest.has_header {
        match records.next() {
            Some(r) => Some(r?),
            None => return Err(Error::Invalid("input is empty".into())),
        }
    } else {
        None
    };
    let mut width = manifest
        .expected_columns
        .or_else(|| header.as_ref().map(|h| h.len()));

    let mut values = Vec::new();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut seen = HashSet::new();
    let first_row = if manifest.has_header { 2 } else { 1 };
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let row = first_row + i;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::Parse {
                row,
                column: rec.len().min(w) + 1,
                message: format!("expected {w} columns, found {}", rec.len()),
            });
        }
        for (c, cell) in rec.iter().enumerate() {
            if Some(c) == manifest.id_column {
                let id = cell.trim().to_string();
                if !seen.insert(id.clone()) {
                    return Err(Error::Parse {
                        row,
                        column: c + 1,
                        message: format!("duplicate gene id '{id}'"),
                    });
                }
                ids.push(id);
            } else if Some(c) == manifest.label_column {
                labels.push(cell.trim().to_string());
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                    row,
                    column: c + 1,
                    message: format!("'{cell}' is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row,
                        column: c + 1,
                        message: format!("'{cell}' is not finite"),
                    });
                }
                values.push(v);
            }
        }
    }
    let width = width.ok_or_else(|| Error::Invalid("input has no columns".into()))?;
    if let Some(h) = &header {
        if h.len() != width {
            return Err(Error::Parse {
                row: 1,
                column: h.len().min(width) + 1,
                message: format!("header has {} columns, expected {width}", h.len()),
            });
        }
    }
    if special.iter().any(|&c| c >= width) {
        return Err(Error::Invalid(format!("id/label column beyond the {width} columns")));
    }
    let data_columns: Vec<usize> = (0..width).filter(|c| !special.contains(c)).collect();
    let m = data_columns.len();
    let times = match &manifest.times {
        TimeSource::List(t) => {
            if t.len() != m {
                return Err(Error::Invalid(format!(
                    "{} time points listed for {m} data columns",
                    t.len()
                )));
            }
            t.clone()
        }
        TimeSource::Header => {
            let h = header
                .as_ref()
                .ok_or_else(|| Error::Invalid("times from header requested but no header".into()))?;
            data_columns
                .iter()
                .map(|&c| {
                    parse_time(&h[c]).ok_or_else(|| Error::Parse {
                        row: 1,
                        column: c + 1,
                        message: format!("no time value in header '{}'", &h[c]),
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    let n = values.len() / m.max(1);
    if n == 0 {
        return Err(Error::Invalid("input has no data rows".into()));
    }
    if manifest.id_column.is_none() {
        ids = (1..=n).map(|j| format!("g{j}")).collect();
    }
    let data = ProfileMatrix::new(values, times, ids)?;
    let data = normalize(&data, &manifest.normalization)?;
    Ok(LoadedProfiles {
        data,
        labels: manifest.label_column.map(|_| labels),
    })
}

/// Load the file named by the manifest.
pub fn load_profiles(manifest: &DatasetManifest) -> Result<LoadedProfiles> {
    let file = File::open(&manifest.path).map_err(|e| {
        Error::Invalid(format!("cannot open {}: {e}", manifest.path.display()))
    })?;
    parse_profiles(BufReader::new(file), manifest)
}

fn mean_sd(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Apply the enabled steps in the order log2, columns, rows. Standard
/// deviations use the `n - 1` denominator.
pub fn normalize(data: &ProfileMatrix, recipe: &Normalization) -> Result<ProfileMatrix> {
    if recipe.is_identity() {
        return Ok(data.clone());
    }
    let (n, m) = (data.n(), data.m());
    let mut v = data.values().to_vec();
    if recipe.log2 {
        if let Some(pos) = v.iter().position(|x| !(*x > 0.0)) {
            return Err(Error::Domain(format!(
                "log2 needs positive values; gene {} time index {} is {}",
                data.gene_ids()[pos / m],
                pos % m,
                v[pos]
            )));
        }
        v.iter_mut().for_each(|x| *x = x.log2());
    }
    if recipe.columns {
        if n < 2 {
            return Err(Error::Invalid("column standardization needs two genes".into()));
        }
        for c in 0..m {
            let (mean, sd) = mean_sd((0..n).map(|j| v[j * m + c]));
            if !(sd > 0.0) {
                return Err(Error::Domain(format!(
                    "column {} (time {}) has zero variance",
                    c + 1,
                    data.times()[c]
                )));
            }
            for j in 0..n {
                v[j * m + c] = (v[j * m + c] - mean) / sd;
            }
        }
    }
    if recipe.rows {
        if m < 2 {
            return Err(Error::Invalid("row standardization needs two time points".into()));
        }
        for j in 0..n {
            let row = &mut v[j * m..(j + 1) * m];
            let (mean, sd) = mean_sd(row.iter().copied());
            if !(sd > 0.0) {
                return Err(Error::Domain(format!(
                    "gene {} has zero variance",
                    data.gene_ids()[j]
                )));
            }
            row.iter_mut().for_each(|x| *x = (*x - mean) / sd);
        }
    }
    data.with_values(v)
}

/// Canonical CSV: header `id,t<time>...`, one gene per row. Reloads with
/// [`DatasetManifest::csv`] to identical values.
pub fn write_profiles<W: Write>(data: &ProfileMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string()];
    header.extend(data.times().iter().map(|t| format!("t{t}")));
    w.write_record(&header)?;
    for (id, row) in data.gene_ids().iter().zip(data.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_profiles(data: &ProfileMatrix, path: &Path) -> Result<()> {
    write_profiles(data, File::create(path)?)
}

/// Labels, one per line. A two-column `id,label` layout is accepted (the
/// last field is used) and a first line `gene,cluster` or similar is
/// skipped when its last field is not numeric while later ones are.
pub fn read_labels(path: &Path) -> Result<Vec<String>> {
    let mut text = String::new();
    File::open(path)
        .map_err(|e| Error::Invalid(format!("cannot open {}: {e}", path.display())))?
        .read_to_string(&mut text)?;
    parse_labels(&text)
}

pub fn parse_labels(text: &str) -> Result<Vec<String>> {
    let mut labels: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.rsplit([',', '\t'])
                .next()
                .unwrap_or(l)
                .trim()
                .to_string()
        })
        .collect();
    let numeric = |s: &String| s.parse::<f64>().is_ok();
    if labels.len() > 1 && !numeric(&labels[0]) && labels[1..].iter().all(numeric) {
        labels.remove(0);
    }
    if labels.is_empty() {
        return Err(Error::Invalid("label file is empty".into()));
    }
    Ok(labels)
}

/// Hard assignments as `gene,cluster` with 1-based clusters.
pub fn write_assignments<W: Write>(data: &ProfileMatrix, assignments: &[usize], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gene", "cluster"])?;
    for (id, a) in data.gene_ids().iter().zip(assignments) {
        w.write_record([id.clone(), (a + 1).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn coefficient_names(n: usize) -> Vec<String> {
    let mut names = vec!["a0".to_string()];
    let mut k = 1;
    while names.len() < n {
        names.push(format!("a{k}"));
        names.push(format!("b{k}"));
        k += 1;
    }
    names.truncate(n);
    names
}

/// One component as a JSON object with named coefficients. Variance terms
/// the family lacks are omitted.
pub fn component_json(c: &ComponentParams, family: CovarianceFamily) -> Value {
    let mut obj = Map::new();
    obj.insert("p".into(), json!(c.p));
    for (name, b) in coefficient_names(c.beta.len()).into_iter().zip(&c.beta) {
        obj.insert(name, json!(b));
    }
    if family.has_white_noise() {
        obj.insert("sigma2".into(), json!(c.sigma2));
    }
    if family.has_ar1() {
        obj.insert("theta2".into(), json!(c.theta2));
        obj.insert("rho".into(), json!(c.rho));
    }
    if family.cluster_effect() {
        obj.insert("d2".into(), json!(c.d2));
    }
    obj.insert("omega".into(), json!(c.omega));
    Value::Object(obj)
}

fn component_from_json(v: &Value, order: usize) -> Result<ComponentParams> {
    let num = |key: &str, default: Option<f64>| -> Result<f64> {
        match v.get(key) {
            Some(x) => x
                .as_f64()
                .ok_or_else(|| Error::Invalid(format!("parameter '{key}' is not a number"))),
            None => default.ok_or_else(|| Error::Invalid(format!("parameter '{key}' missing"))),
        }
    };
    let beta = match v.get("beta") {
        Some(b) => serde_json::from_value(b.clone())?,
        None => coefficient_names(2 * order + 1)
            .iter()
            .map(|name| num(name, None))
            .collect::<Result<Vec<f64>>>()?,
    };
    Ok(ComponentParams {
        p: num("p", None)?,
        beta,
        theta2: num("theta2", Some(0.0))?,
        rho: num("rho", Some(0.0))?,
        sigma2: num("sigma2", Some(0.0))?,
        d2: num("d2", Some(0.0))?,
        omega: num("omega", Some(1.0))?,
    })
}

/// Starting parameters from JSON: a list of components, or a fit report
/// with a `components` field.
pub fn parse_params(text: &str, order: usize) -> Result<Vec<ComponentParams>> {
    let v: Value = serde_json::from_str(text)?;
    let list = match &v {
        Value::Array(a) => a,
        Value::Object(o) => o
            .get("components")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Invalid("parameter file needs a 'components' list".into()))?,
        _ => return Err(Error::Invalid("parameter file must hold a list or an object".into())),
    };
    list.iter().map(|c| component_from_json(c, order)).collect()
}

pub fn read_params(path: &Path, order: usize) -> Result<Vec<ComponentParams>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Invalid(format!("cannot open {}: {e}", path.display())))?;
    parse_params(&text, order)
}

/// Everything needed to audit or rerun a fit.
pub fn fit_report(
    data: &ProfileMatrix,
    fit: &FitResult,
    config: &FitConfig,
    model_name: &str,
    normalization: &Normalization,
) -> Value {
    let family = fit.model.family;
    let g = fit.model.g();
    let responsibilities: Vec<&[f64]> = (0..data.n()).map(|j| fit.responsibilities.row(j)).collect();
    json!({
        "model": model_name,
        "g": g,
        "order": fit.model.order,
        "n_genes": data.n(),
        "times": data.times(),
        "components": fit.model.components.iter().map(|c| component_json(c, family)).collect::<Vec<_>>(),
        "loglik": fit.loglik(),
        "marginal_loglik": fit.marginal_loglik,
        "loglik_trace": fit.loglik_trace,
        "converged": fit.converged,
        "stop_reason": fit.stop_reason,
        "iterations": fit.iterations,
        "start": fit.start,
        "start_logliks": fit.start_logliks,
        "gene_ids": data.gene_ids(),
        "assignments": fit.assignments.iter().map(|a| a + 1).collect::<Vec<_>>(),
        "responsibilities": responsibilities,
        "cluster_effects": fit.posterior_v.iter().map(|v| &v.mean).collect::<Vec<_>>(),
        "config": config,
        "seed": config.seed,
        "normalization": {
            "steps": normalization.steps(),
            "order": ["log2", "standardize-columns", "standardize-rows"],
        },
    })
}

/// Plot-ready rows `time, cluster, fitted, observed`. `observed` is the
/// mean of the genes assigned to the cluster, empty for empty clusters.
pub fn write_cluster_means<W: Write>(data: &ProfileMatrix, fit: &FitResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "cluster", "fitted", "observed"])?;
    let m = data.m();
    for (h, c) in fit.model.components.iter().enumerate() {
        let x = fourier_design(&DesignSpec::new(data.times().to_vec(), fit.model.order, c.omega)?)?;
        let members: Vec<usize> = (0..data.n()).filter(|&j| fit.assignments[j] == h).collect();
        for t in 0..m {
            let fitted: f64 = (0..x.ncols()).map(|k| x[(t, k)] * c.beta[k]).sum();
            let observed = if members.is_empty() {
                String::new()
            } else {
                let s: f64 = members.iter().map(|&j| data.row(j)[t]).sum();
                (s / members.len() as f64).to_string()
            };
            w.write_record([
                data.times()[t].to_string(),
                (h + 1).to_string(),
                fitted.to_string(),
                observed,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
