//! Synthetic time-course data and replicated bias/clustering studies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{FitConfig, Init};
use crate::error::{Error, Result};
use crate::fourier::{evaluate_curve, n_coefficients};
use crate::metrics::{agreement, match_components, Partition};
use crate::model::{ComponentParams, CovarianceFamily, MixtureModel, ModelKind, ProfileMatrix};

/// Which generative model produces the profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// Gene AR(1) effect, shared cluster effect and white noise.
    EmwireFull,
    /// As `EmwireFull` with the cluster effect switched off.
    EmwireNov,
    /// AR(1) residual only.
    Kim,
}

impl std::str::FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emwire-full" => Ok(Self::EmwireFull),
            "emwire-nov" => Ok(Self::EmwireNov),
            "kim" => Ok(Self::Kim),
            other => Err(Error::Invalid(format!("unknown generator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub name: String,
    pub generator: Generator,
    /// True parameters; `beta` is `(a0, a1, b1, ...)`.
    pub components: Vec<ComponentParams>,
    pub order: usize,
    pub times: Vec<f64>,
    pub n_genes: usize,
    pub n_replicates: usize,
    pub seed: u64,
}

impl SimDesign {
    pub fn g(&self) -> usize {
        self.components.len()
    }

    pub fn m(&self) -> usize {
        self.times.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Invalid("design has no components".into()));
        }
        if self.times.len() < 2 {
            return Err(Error::Invalid("design needs at least two time points".into()));
        }
        if self.n_genes < 2 {
            return Err(Error::Invalid("design needs at least two genes".into()));
        }
        if self.n_replicates == 0 {
            return Err(Error::Invalid("replicate count must be at least 1".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.p).sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Invalid(format!("mixing proportions sum to {total}")));
        }
        for c in &self.components {
            if c.beta.len() != n_coefficients(self.order) {
                return Err(Error::Invalid("coefficient count does not match order".into()));
            }
            if !(c.p >= 0.0) || !(c.omega > 0.0) {
                return Err(Error::Invalid("invalid proportion or period".into()));
            }
            if c.rho.abs() >= 1.0 || c.theta2 < 0.0 || c.sigma2 < 0.0 || c.d2 < 0.0 {
                return Err(Error::Invalid("invalid variance parameters".into()));
            }
        }
        Ok(())
    }

    /// The true parameters as a mixture model of the given family, with
    /// terms the family lacks set to zero.
    pub fn true_model(&self, family: CovarianceFamily) -> MixtureModel {
        let mut model = MixtureModel {
            components: self.components.clone(),
            order: self.order,
            family,
        };
        model.canonicalize();
        model
    }
}

struct Row {
    p: f64,
    a0: f64,
    a1: f64,
    b1: f64,
    omega: f64,
}

fn first_order(rows: &[Row], theta2: &[f64], rho: &[f64], sigma2: &[f64], d2: &[f64]) -> Vec<ComponentParams> {
    rows.iter()
        .enumerate()
        .map(|(h, r)| ComponentParams {
            p: r.p,
            beta: vec![r.a0, r.a1, r.b1],
            theta2: theta2[h],
            rho: rho[h],
            sigma2: sigma2[h],
            d2: d2[h],
            omega: r.omega,
        })
        .collect()
}

fn normalized(mut c: Vec<ComponentParams>) -> Vec<ComponentParams> {
    let total: f64 = c.iter().map(|x| x.p).sum();
    c.iter_mut().for_each(|x| x.p /= total);
    c
}

pub const PRESETS: [&str; 9] = [
    "table1", "table2", "table3", "table4", "table5", "table6", "yeast1", "yeast2", "recovery",
];

/// Built-in designs. `table1`..`table6` are the three-cluster simulation
/// designs; `yeast1`/`yeast2` generate from the fitted yeast parameters;
/// `recovery` has well-separated curves at periods 6, 10 and 16.
pub fn preset(name: &str) -> Result<SimDesign> {
    let hourly: Vec<f64> = (0..24).map(f64::from).collect();
    let sampled: Vec<f64> = (0..17).map(|i| 10.0 * f64::from(i)).collect();
    let sim_rows = || {
        vec![
            Row { p: 0.585, a0: 0.3, a1: 0.03, b1: 0.06, omega: 6.0 },
            Row { p: 0.1, a0: 1.0, a1: 1.0, b1: 0.9, omega: 10.0 },
            Row { p: 0.315, a0: 0.2, a1: 0.02, b1: 0.01, omega: 16.0 },
        ]
    };
    let three = |x: f64| [x; 3];
    let (generator, components, times, n_genes) = match name {
        "table1" | "table2" | "table3" | "table4" | "table5" | "table6" => {
            let k: usize = name[5..].parse().expect("preset suffix");
            let theta2 = if k % 2 == 1 { 0.5 } else { 1.3 };
            let (generator, sigma2, d2) = match k {
                1 | 2 => (Generator::EmwireFull, 1.0, [0.4, 0.2, 0.3]),
                3 | 4 => (Generator::EmwireNov, 1.0, [0.0; 3]),
                _ => (Generator::Kim, 0.0, [0.0; 3]),
            };
            let c = first_order(&sim_rows(), &three(theta2), &three(0.6), &three(sigma2), &d2);
            (generator, c, hourly, 200)
        }
        "yeast1" => {
            let rows: Vec<Row> = [
                (0.104, -0.107, 1.009),
                (0.054, 0.400, -0.119),
                (0.118, -0.807, -0.053),
                (0.724, 0.298, 0.079),
            ]
            .iter()
            .map(|&(p, a1, b1)| Row { p, a0: 0.0, a1, b1, omega: 85.0 })
            .collect();
            let c = first_order(
                &rows,
                &[0.174, 0.417, 0.443, 0.307],
                &[0.278, 0.717, 0.435, 0.053],
                &[0.027, 0.011, 0.025, 0.278],
                &[0.191, 0.001, 0.031, 0.310],
            );
            (Generator::EmwireFull, c, sampled, 237)
        }
        "yeast2" => {
            let rows: Vec<Row> = [
                (0.238, 0.643, -0.062),
                (0.290, -0.061, 1.019),
                (0.151, -0.736, 0.285),
                (0.165, -0.616, -0.772),
                (0.157, 0.329, -1.001),
            ]
            .iter()
            .map(|&(p, a1, b1)| Row { p, a0: 0.0, a1, b1, omega: 85.0 })
            .collect();
            let c = first_order(
                &rows,
                &[0.498, 0.296, 0.470, 0.309, 0.244],
                &[0.503, 0.269, 0.364, 0.379, 0.550],
                &[0.011, 0.046, 0.037, 0.028, 0.006],
                &[0.062, 0.052, 0.044, 0.065, 0.030],
            );
            (Generator::EmwireFull, normalized(c), sampled, 384)
        }
        "recovery" => {
            let rows = vec![
                Row { p: 0.4, a0: 0.0, a1: 1.5, b1: 0.5, omega: 6.0 },
                Row { p: 0.3, a0: 0.5, a1: -1.0, b1: 1.2, omega: 10.0 },
                Row { p: 0.3, a0: -0.5, a1: 0.8, b1: -1.5, omega: 16.0 },
            ];
            let c = first_order(&rows, &three(0.3), &three(0.5), &three(0.3), &three(0.1));
            (Generator::EmwireFull, c, hourly, 150)
        }
        other => {
            return Err(Error::Invalid(format!(
                "unknown preset '{other}' (known: {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(SimDesign {
        name: name.to_string(),
        generator,
        components,
        order: 1,
        times,
        n_genes,
        n_replicates: 100,
        seed: 0,
    })
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub data: ProfileMatrix,
    /// 0-based true component of every gene.
    pub truth: Vec<usize>,
    pub params: Vec<ComponentParams>,
}

fn ar1_path(rng: &mut ChaCha8Rng, theta2: f64, rho: f64, out: &mut [f64]) {
    let theta = theta2.sqrt();
    let mut prev = 0.0;
    for (t, o) in out.iter_mut().enumerate() {
        let e: f64 = StandardNormal.sample(rng);
        prev = if t == 0 {
            e * theta / (1.0 - rho * rho).sqrt()
        } else {
            rho * prev + theta * e
        };
        *o = prev;
    }
}

/// One dataset, deterministic in `(design.seed, replicate)`.
pub fn generate_dataset(design: &SimDesign, replicate: usize) -> Result<SimDataset> {
    design.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    rng.set_stream(replicate as u64);
    let g = design.g();
    let m = design.m();
    let n = design.n_genes;
    let weights = WeightedIndex::new(design.components.iter().map(|c| c.p))
        .map_err(|e| Error::Invalid(format!("mixing proportions: {e}")))?;
    let truth: Vec<usize> = (0..n).map(|_| weights.sample(&mut rng)).collect();

    let means: Vec<Vec<f64>> = design
        .components
        .iter()
        .map(|c| evaluate_curve(&design.times, design.order, c.omega, &c.beta))
        .collect::<Result<_>>()?;
    let with_shared = design.generator == Generator::EmwireFull;
    let shared: Vec<Vec<f64>> = design
        .components
        .iter()
        .map(|c| {
            let sd = if with_shared { c.d2.sqrt() } else { 0.0 };
            (0..m)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect::<Vec<f64>>()
        })
        .collect();

    let mut values = Vec::with_capacity(n * m);
    let mut path = vec![0.0; m];
    for &h in &truth {
        let c = &design.components[h];
        ar1_path(&mut rng, c.theta2, c.rho, &mut path);
        let noise_sd = if design.generator == Generator::Kim {
            0.0
        } else {
            c.sigma2.sqrt()
        };
        for t in 0..m {
            let e: f64 = rng.sample(StandardNormal);
            values.push(means[h][t] + path[t] + shared[h][t] + noise_sd * e);
        }
    }
    let ids = (1..=n).map(|j| format!("g{j}")).collect();
    let data = ProfileMatrix::new(values, design.times.clone(), ids)?;
    debug_assert!(truth.iter().all(|&h| h < g));
    Ok(SimDataset {
        data,
        truth,
        params: design.components.clone(),
    })
}

/// How each fitter is started in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyInit {
    /// Random-effects fitters start from the true partition, the
    /// AR(1)-residual fitter from the true parameters.
    Oracle,
    /// Every fitter starts from the true partition.
    TruePartition,
    /// Every fitter starts from the true parameters.
    TrueParams,
    /// Seeded random partitions.
    Random { starts: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub fitters: Vec<ModelKind>,
    pub init: StudyInit,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            fitters: vec![ModelKind::EmWire, ModelKind::Kim],
            init: StudyInit::Oracle,
            rel_tol: 1e-5,
            max_iter: 1000,
        }
    }
}

/// Outcome of one fitter on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub fitter: ModelKind,
    pub error: Option<f64>,
    pub rand: Option<f64>,
    pub adjusted: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Aligned estimates, `[component][parameter]` in `param_names` order.
    pub estimates: Vec<Vec<f64>>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub fitter: ModelKind,
    pub parameter: String,
    /// 1-based, matching the table layout.
    pub component: usize,
    pub truth: f64,
    /// `None` when the fitter has no such parameter.
    pub bias: Option<f64>,
    pub sd: Option<f64>,
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitterSummary {
    pub fitter: ModelKind,
    pub successes: usize,
    pub failures: usize,
    pub converged: usize,
    pub error: f64,
    pub rand: f64,
    pub adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub design: SimDesign,
    pub options: StudyOptions,
    pub replicates: usize,
    pub summaries: Vec<FitterSummary>,
    pub params: Vec<ParamSummary>,
    pub outcomes: Vec<ReplicateOutcome>,
}

/// Parameter names in report order: `p`, the Fourier coefficients, then the
/// variance terms.
pub fn param_names(order: usize) -> Vec<String> {
    let mut names = vec!["p".to_string(), "a0".to_string()];
    for k in 1..=order {
        names.push(format!("a{k}"));
        names.push(format!("b{k}"));
    }
    names.extend(["sigma2", "theta2", "rho", "d2"].map(String::from));
    names
}

fn param_vector(c: &ComponentParams) -> Vec<f64> {
    let mut v = vec![c.p];
    v.extend(&c.beta);
    v.extend([c.sigma2, c.theta2, c.rho, c.d2]);
    v
}

fn applies(family: CovarianceFamily, name: &str) -> bool {
    match name {
        "sigma2" => family.has_white_noise(),
        "theta2" | "rho" => family.has_ar1(),
        "d2" => family.cluster_effect(),
        _ => true,
    }
}

fn fit_config(design: &SimDesign, kind: ModelKind, options: &StudyOptions, data: &SimDataset, replicate: usize) -> FitConfig {
    let omegas = design.components.iter().map(|c| c.omega).collect();
    let mut config = FitConfig::new(design.g(), omegas, kind);
    config.order = design.order;
    config.rel_tol = options.rel_tol;
    config.max_iter = options.max_iter;
    config.seed = design.seed ^ (replicate as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let by_params = Init::Params(data.params.clone());
    let by_labels = Init::Partition(data.truth.clone());
    config.init = match options.init {
        StudyInit::Oracle if kind == ModelKind::Kim => by_params,
        StudyInit::Oracle | StudyInit::TruePartition => by_labels,
        StudyInit::TrueParams => by_params,
        StudyInit::Random { starts } => {
            config.n_starts = starts;
            Init::RandomPartition
        }
    };
    config
}

fn evaluate(
    design: &SimDesign,
    kind: ModelKind,
    options: &StudyOptions,
    data: &SimDataset,
    replicate: usize,
) -> ReplicateOutcome {
    let config = fit_config(design, kind, options, data, replicate);
    let outcome = crate::em::fit(&data.data, &config).and_then(|fit| {
        let g = design.g();
        let map = match_components(&fit.assignments, &data.truth, g)?;
        let mut estimates = vec![Vec::new(); g];
        for (fitted, &true_h) in map.iter().enumerate() {
            estimates[true_h] = param_vector(&fit.model.components[fitted]);
        }
        let scores = agreement(&Partition::new(&fit.assignments), &Partition::new(&data.truth))?;
        Ok((fit, estimates, scores))
    });
    match outcome {
        Ok((fit, estimates, scores)) => ReplicateOutcome {
            replicate,
            fitter: kind,
            error: Some(scores.error),
            rand: Some(scores.rand),
            adjusted: Some(scores.adjusted),
            converged: fit.converged,
            iterations: fit.iterations,
            estimates,
            failure: None,
        },
        Err(e) => ReplicateOutcome {
            replicate,
            fitter: kind,
            error: None,
            rand: None,
            adjusted: None,
            converged: false,
            iterations: 0,
            estimates: Vec::new(),
            failure: Some(e.to_string()),
        },
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Generate `n_replicates` datasets, fit every requested model and
/// summarize biases and agreement with the truth. Replicates run on the
/// current rayon pool; results are accumulated in replicate order.
pub fn run_study(design: &SimDesign, options: &StudyOptions) -> Result<BenchmarkReport> {
    design.validate()?;
    if options.fitters.is_empty() {
        return Err(Error::Invalid("no fitters requested".into()));
    }
    let per_replicate: Vec<Vec<ReplicateOutcome>> = (0..design.n_replicates)
        .into_par_iter()
        .map(|r| match generate_dataset(design, r) {
            Ok(data) => options
                .fitters
                .iter()
                .map(|&kind| evaluate(design, kind, options, &data, r))
                .collect(),
            Err(e) => options
                .fitters
                .iter()
                .map(|&kind| ReplicateOutcome {
                    replicate: r,
                    fitter: kind,
                    error: None,
                    rand: None,
                    adjusted: None,
                    converged: false,
                    iterations: 0,
                    estimates: Vec::new(),
                    failure: Some(e.to_string()),
                })
                .collect(),
        })
        .collect();
    let outcomes: Vec<ReplicateOutcome> = per_replicate.into_iter().flatten().collect();

    let names = param_names(design.order);
    let mut summaries = Vec::new();
    let mut params = Vec::new();
    for &kind in &options.fitters {
        let mine: Vec<&ReplicateOutcome> = outcomes
            .iter()
            .filter(|o| o.fitter == kind && o.failure.is_none())
            .collect();
        let pick = |f: fn(&ReplicateOutcome) -> Option<f64>| {
            let xs: Vec<f64> = mine.iter().filter_map(|o| f(o)).collect();
            if xs.is_empty() {
                f64::NAN
            } else {
                mean_sd(&xs).0
            }
        };
        summaries.push(FitterSummary {
            fitter: kind,
            successes: mine.len(),
            failures: design.n_replicates - mine.len(),
            converged: mine.iter().filter(|o| o.converged).count(),
            error: pick(|o| o.error),
            rand: pick(|o| o.rand),
            adjusted: pick(|o| o.adjusted),
        });
        let family = kind.family();
        for (h, c) in design.components.iter().enumerate() {
            let truth = param_vector(c);
            for (i, name) in names.iter().enumerate() {
                let (bias, sd, rmse) = if applies(family, name) && !mine.is_empty() {
                    let est: Vec<f64> = mine.iter().map(|o| o.estimates[h][i]).collect();
                    let (mean, sd) = mean_sd(&est);
                    let mse = est.iter().map(|e| (e - truth[i]).powi(2)).sum::<f64>() / est.len() as f64;
                    (Some(mean - truth[i]), Some(sd), Some(mse.sqrt()))
                } else {
                    (None, None, None)
                };
                params.push(ParamSummary {
                    fitter: kind,
                    parameter: name.clone(),
                    component: h + 1,
                    truth: truth[i],
                    bias,
                    sd,
                    rmse,
                });
            }
        }
    }
    Ok(BenchmarkReport {
        design: design.clone(),
        options: options.clone(),
        replicates: design.n_replicates,
        summaries,
        params,
        outcomes,
    })
}

impl BenchmarkReport {
    pub fn summary(&self, kind: ModelKind) -> Option<&FitterSummary> {
        self.summaries.iter().find(|s| s.fitter == kind)
    }

    pub fn param(&self, kind: ModelKind, name: &str, component: usize) -> Option<&ParamSummary> {
        self.params
            .iter()
            .find(|p| p.fitter == kind && p.parameter == name && p.component == component)
    }

    /// Outcomes of one fitter in replicate order.
    pub fn outcomes_for(&self, kind: ModelKind) -> impl Iterator<Item = &ReplicateOutcome> {
        self.outcomes.iter().filter(move |o| o.fitter == kind)
    }

    /// Flat table: one row per fitter x parameter x component, then one row
    /// per fitter x agreement metric. Non-applicable cells are empty.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["fitter", "parameter", "component", "truth", "bias", "sd", "rmse"])?;
        let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for p in &self.params {
            w.write_record([
                p.fitter.name().to_string(),
                p.parameter.clone(),
                p.component.to_string(),
                p.truth.to_string(),
                cell(p.bias),
                cell(p.sd),
                cell(p.rmse),
            ])?;
        }
        for s in &self.summaries {
            for (name, value) in [("error_rate", s.error), ("rand", s.rand), ("adjusted_rand", s.adjusted)] {
                w.write_record([s.fitter.name(), name, "", "", &value.to_string(), "", ""])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
