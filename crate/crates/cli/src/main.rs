//! `tcmix`: fit, simulate, evaluate and period-search from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use tcmix_core::em::{fit, FitConfig, FitResult, Init};
use tcmix_core::io::{
    fit_report, load_profiles, read_labels, read_params, write_assignments, write_cluster_means, write_profiles,
    DatasetManifest, Normalization, TimeSource,
};
use tcmix_core::metrics::{agreement, Partition};
use tcmix_core::model::{ModelKind, ProfileMatrix};
use tcmix_core::period::{grid_search, write_scores, PeriodGrid, DEFAULT_CAP};
use tcmix_core::synth::{generate_dataset, preset, run_study, StudyInit, StudyOptions};

type CliResult<T> = Result<T, String>;

#[derive(Parser, Debug)]
#[command(name = "tcmix", version, about = "Cluster periodic time-course profiles with AR(1) random-effects mixtures")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct Global {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// TOML file whose keys override command-line flags.
    #[arg(long, global = true)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a mixture to an expression matrix.
    Fit(FitArgs),
    /// Run a replicated simulation study.
    Simulate(SimulateArgs),
    /// Compare two label files.
    Evaluate(EvaluateArgs),
    /// Fit every period tuple of a grid and keep the best.
    Gridsearch(GridArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct DataArgs {
    /// Expression matrix (CSV/TSV).
    #[arg(long)]
    input: Option<PathBuf>,
    /// TOML dataset manifest; replaces the other input flags.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[arg(long)]
    no_header: bool,
    /// 0-based gene id column; use -1 for none.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    id_column: i64,
    /// 0-based reference label column.
    #[arg(long)]
    label_column: Option<usize>,
    /// Explicit time points instead of header values.
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    #[arg(long)]
    log2: bool,
    #[arg(long)]
    standardize_columns: bool,
    #[arg(long)]
    standardize_rows: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ModelArgs {
    #[arg(long, default_value = "emwire")]
    model: String,
    #[arg(long, default_value_t = 2)]
    g: usize,
    /// Fourier order.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 1e-5)]
    rel_tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, default_value_t = 10)]
    starts: usize,
    /// random, labels-file or params-file.
    #[arg(long, default_value = "random")]
    init: String,
    /// File for labels-file / params-file initialization.
    #[arg(long)]
    init_file: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Period per component; a single value is used for all.
    #[arg(long, value_delimiter = ',', required = false)]
    omega: Vec<f64>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct SimulateArgs {
    /// table1..table6, yeast1, yeast2 or recovery.
    #[arg(long)]
    preset: String,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long)]
    n_genes: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "emwire,kim")]
    fitters: Vec<String>,
    /// oracle, true-partition, true-params or random.
    #[arg(long, default_value = "oracle")]
    init: String,
    /// Random starts when --init random.
    #[arg(long, default_value_t = 10)]
    starts: usize,
    #[arg(long, default_value_t = 1e-5)]
    rel_tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// Also write replicate 0 as data.csv with its true labels in truth.csv.
    #[arg(long)]
    write_data: bool,
    /// Only write the data; skip the study.
    #[arg(long)]
    data_only: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct EvaluateArgs {
    /// Predicted labels.
    #[arg(long)]
    pred: PathBuf,
    /// Reference labels.
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct GridArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Candidates as `a:b`, `a:b:step` or `x,y,z`. Give once for a shared
    /// period, or once per component for a product grid.
    #[arg(long, required = true)]
    grid: Vec<String>,
    /// Use the single --grid list independently for every component.
    #[arg(long)]
    per_component: bool,
    #[arg(long, default_value_t = DEFAULT_CAP)]
    grid_cap: usize,
}

/// Overlay `path`'s keys onto the parsed flags. Keys matching shared flags
/// go to them, the rest to the subcommand.
fn apply_config<T: Serialize + for<'de> Deserialize<'de>>(
    path: &Path,
    global: &mut Global,
    args: &mut T,
) -> CliResult<()> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut g = serde_json::to_value(&*global).map_err(|e| e.to_string())?;
    let mut a = serde_json::to_value(&*args).map_err(|e| e.to_string())?;
    for (key, value) in table {
        let value = serde_json::to_value(value).map_err(|e| e.to_string())?;
        let target = if g.get(&key).is_some() {
            &mut g
        } else if a.get(&key).is_some() {
            &mut a
        } else {
            return Err(format!("unknown config key '{key}'"));
        };
        target[&key] = value;
    }
    let config = global.config.take();
    *global = serde_json::from_value(g).map_err(|e| format!("config: {e}"))?;
    global.config = config;
    *args = serde_json::from_value(a).map_err(|e| format!("config: {e}"))?;
    Ok(())
}

fn manifest_from(args: &DataArgs) -> CliResult<DatasetManifest> {
    if let Some(path) = &args.manifest {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let mut m: DatasetManifest = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        if m.path.is_relative() {
            if let Some(dir) = path.parent() {
                m.path = dir.join(&m.path);
            }
        }
        return Ok(m);
    }
    let input = args.input.clone().ok_or("either --input or --manifest is required")?;
    Ok(DatasetManifest {
        path: input,
        delimiter: args.delimiter,
        has_header: !args.no_header,
        times: match &args.times {
            Some(t) => TimeSource::List(t.clone()),
            None => TimeSource::Header,
        },
        id_column: usize::try_from(args.id_column).ok(),
        label_column: args.label_column,
        expected_columns: None,
        normalization: Normalization {
            log2: args.log2,
            columns: args.standardize_columns,
            rows: args.standardize_rows,
        },
    })
}

fn labels_to_indices(labels: &[String], g: usize) -> CliResult<Vec<usize>> {
    let numeric: Option<Vec<usize>> = labels.iter().map(|l| l.parse::<usize>().ok()).collect();
    if let Some(n) = numeric {
        if n.iter().all(|&l| (1..=g).contains(&l)) {
            return Ok(n.iter().map(|l| l - 1).collect());
        }
    }
    let p = Partition::new(labels);
    if p.n_blocks() > g {
        return Err(format!("label file has {} groups but g = {g}", p.n_blocks()));
    }
    Ok(p.labels().to_vec())
}

fn fit_config(model: &ModelArgs, omegas: &[f64], seed: u64, n_genes: usize) -> CliResult<(FitConfig, ModelKind)> {
    let kind: ModelKind = model.model.parse().map_err(|e: tcmix_core::Error| e.to_string())?;
    let omegas = match omegas.len() {
        0 => return Err("--omega is required".into()),
        1 => vec![omegas[0]; model.g],
        _ => omegas.to_vec(),
    };
    let mut config = FitConfig::new(model.g, omegas, kind).with_seed(seed);
    config.order = model.k;
    config.rel_tol = model.rel_tol;
    config.max_iter = model.max_iter;
    config.n_starts = model.starts;
    config.init = match model.init.as_str() {
        "random" => Init::RandomPartition,
        "labels-file" => {
            let path = model.init_file.as_ref().ok_or("--init labels-file needs --init-file")?;
            let labels = read_labels(path).map_err(|e| e.to_string())?;
            if labels.len() != n_genes {
                return Err(format!("{} initial labels for {n_genes} genes", labels.len()));
            }
            Init::Partition(labels_to_indices(&labels, model.g)?)
        }
        "params-file" => {
            let path = model.init_file.as_ref().ok_or("--init params-file needs --init-file")?;
            Init::Params(read_params(path, model.k).map_err(|e| e.to_string())?)
        }
        other => return Err(format!("unknown --init '{other}'")),
    };
    config.validate().map_err(|e| e.to_string())?;
    Ok((config, kind))
}

fn write_file(dir: &Path, name: &str, write: impl FnOnce(std::fs::File) -> tcmix_core::Result<()>) -> CliResult<()> {
    let path = dir.join(name);
    let file = std::fs::File::create(&path).map_err(|e| format!("cannot create {}: {e}", path.display()))?;
    write(file).map_err(|e| format!("writing {}: {e}", path.display()))
}

fn write_json(dir: &Path, name: &str, value: &Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    std::fs::write(dir.join(name), text + "\n").map_err(|e| format!("cannot write {name}: {e}"))
}

fn write_fit_outputs(
    dir: &Path,
    data: &ProfileMatrix,
    result: &FitResult,
    config: &FitConfig,
    kind: ModelKind,
    normalization: &Normalization,
    run: Value,
) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let mut report = fit_report(data, result, config, kind.name(), normalization);
    report["run"] = run;
    write_json(dir, "fit.json", &report)?;
    write_file(dir, "assignments.csv", |f| write_assignments(data, &result.assignments, f))?;
    write_file(dir, "cluster_means.csv", |f| write_cluster_means(data, result, f))
}

fn exit_for(converged: bool) -> u8 {
    if converged {
        0
    } else {
        2
    }
}

fn cmd_fit(global: &Global, args: &FitArgs) -> CliResult<u8> {
    let manifest = manifest_from(&args.data)?;
    let loaded = load_profiles(&manifest).map_err(|e| e.to_string())?;
    let (config, kind) = fit_config(&args.model, &args.omega, global.seed, loaded.data.n())?;
    let result = fit(&loaded.data, &config).map_err(|e| e.to_string())?;
    let run = json!({ "command": "fit", "global": global, "args": args, "manifest": manifest });
    write_fit_outputs(&global.out_dir, &loaded.data, &result, &config, kind, &manifest.normalization, run)?;
    Ok(exit_for(result.converged))
}

fn parse_candidates(spec: &str) -> CliResult<Vec<f64>> {
    let bad = || format!("bad grid '{spec}': use a:b, a:b:step or x,y,z");
    if spec.contains(':') {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<CliResult<_>>()?;
        let (lo, hi, step) = match parts[..] {
            [lo, hi] => (lo, hi, 1.0),
            [lo, hi, step] => (lo, hi, step),
            _ => return Err(bad()),
        };
        if step.is_nan() || step <= 0.0 || hi < lo {
            return Err(bad());
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|i| lo + step * i as f64).collect())
    } else {
        spec.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect()
    }
}

fn cmd_gridsearch(global: &Global, args: &GridArgs) -> CliResult<u8> {
    let lists: Vec<Vec<f64>> = args.grid.iter().map(|s| parse_candidates(s)).collect::<CliResult<_>>()?;
    let g = args.model.g;
    let grid = match (lists.len(), args.per_component) {
        (1, false) => PeriodGrid::Shared(lists[0].clone()),
        (1, true) => PeriodGrid::PerComponent(vec![lists[0].clone(); g]),
        (n, _) if n == g => PeriodGrid::PerComponent(lists),
        (n, _) => return Err(format!("{n} --grid lists for g = {g}; give one or {g}")),
    };
    // Validate the grid before touching the data so oversize grids fail fast.
    grid.tuples(g, args.grid_cap).map_err(|e| e.to_string())?;
    let manifest = manifest_from(&args.data)?;
    let loaded = load_profiles(&manifest).map_err(|e| e.to_string())?;
    let placeholder = vec![1.0];
    let (config, kind) = fit_config(&args.model, &placeholder, global.seed, loaded.data.n())?;
    let search = grid_search(&loaded.data, &config, &grid, args.grid_cap).map_err(|e| e.to_string())?;
    let mut best_config = config.clone();
    best_config.omegas = search.best_periods.clone();
    let run = json!({
        "command": "gridsearch",
        "global": global,
        "args": args,
        "manifest": manifest,
        "best_periods": search.best_periods,
    });
    write_fit_outputs(&global.out_dir, &loaded.data, &search.best, &best_config, kind, &manifest.normalization, run)?;
    write_file(&global.out_dir, "scores.csv", |f| write_scores(&search.scores, f))?;
    Ok(exit_for(search.best.converged))
}

fn cmd_simulate(global: &Global, args: &SimulateArgs) -> CliResult<u8> {
    let mut design = preset(&args.preset).map_err(|e| e.to_string())?;
    design.n_replicates = args.reps;
    design.seed = global.seed;
    if let Some(n) = args.n_genes {
        design.n_genes = n;
    }
    design.validate().map_err(|e| e.to_string())?;
    let dir = &global.out_dir;
    if args.write_data || args.data_only {
        let sample = generate_dataset(&design, 0).map_err(|e| e.to_string())?;
        std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
        write_file(dir, "data.csv", |f| write_profiles(&sample.data, f))?;
        write_file(dir, "truth.csv", |f| write_assignments(&sample.data, &sample.truth, f))?;
        if args.data_only {
            return Ok(0);
        }
    }
    let fitters: Vec<ModelKind> = args
        .fitters
        .iter()
        .map(|f| f.parse().map_err(|e: tcmix_core::Error| e.to_string()))
        .collect::<CliResult<_>>()?;
    let init = match args.init.as_str() {
        "oracle" => StudyInit::Oracle,
        "true-partition" => StudyInit::TruePartition,
        "true-params" => StudyInit::TrueParams,
        "random" => StudyInit::Random { starts: args.starts },
        other => return Err(format!("unknown --init '{other}'")),
    };
    let options = StudyOptions {
        fitters,
        init,
        rel_tol: args.rel_tol,
        max_iter: args.max_iter,
    };
    let report = run_study(&design, &options).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let mut value = serde_json::to_value(&report).map_err(|e| e.to_string())?;
    value["run"] = json!({ "command": "simulate", "global": global, "args": args });
    write_json(dir, "report.json", &value)?;
    write_file(dir, "report.csv", |f| report.write_csv(f))?;
    for s in &report.summaries {
        eprintln!(
            "{}: error {:.4} rand {:.4} adjusted {:.4} ({} ok, {} failed)",
            s.fitter.name(),
            s.error,
            s.rand,
            s.adjusted,
            s.successes,
            s.failures
        );
    }
    Ok(0)
}

fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<u8> {
    let pred = read_labels(&args.pred).map_err(|e| e.to_string())?;
    let truth = read_labels(&args.truth).map_err(|e| e.to_string())?;
    let a = agreement(&Partition::new(&pred), &Partition::new(&truth)).map_err(|e| e.to_string())?;
    println!("{}", serde_json::to_string(&a).map_err(|e| e.to_string())?);
    Ok(0)
}

fn run(cli: Cli) -> CliResult<u8> {
    let Cli { mut global, command } = cli;
    let mut command = command;
    if let Some(path) = global.config.clone() {
        match &mut command {
            Command::Fit(a) => apply_config(&path, &mut global, a)?,
            Command::Simulate(a) => apply_config(&path, &mut global, a)?,
            Command::Evaluate(a) => apply_config(&path, &mut global, a)?,
            Command::Gridsearch(a) => apply_config(&path, &mut global, a)?,
        }
    }
    if global.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(global.threads)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    match &command {
        Command::Fit(a) => cmd_fit(&global, a),
        Command::Simulate(a) => cmd_simulate(&global, a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Gridsearch(a) => cmd_gridsearch(&global, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
