//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::baselines::{kplanes, params_from_clusters, KPlanesState};
use crate::bench::{classification_report, grid, run_v1_sweep, subset_table, Method, SweepConfig};
use crate::driver::{fit, FitOptions, Init};
use crate::error::{Error, Result};
use crate::eval::{align_factors, predict_nearest_subspace, report_rows, write_report, Classifier};
use crate::io::{load_model, read_dataset, read_table_file, save_model, write_dataset, write_table, Table};
use crate::model::{Dataset, FitReport, Hyper, ModelParams, NoiseKind, StopReason};
use crate::rng::SeedChain;
use crate::synth::{generate, SynthConfig};
use crate::trajectory::{add_group_noise, read_trajectories, stratified_split, NoiseProtocol};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DEGENERATE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hemppcat", version, about = "Heteroscedastic mixtures of probabilistic PCA")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Existing output directory; overrides the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic dataset and its generating model.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit one method to a dataset CSV.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV; defaults to `data.path` in the configuration.
        dataset: Option<PathBuf>,
        #[arg(long)]
        method: Option<Method>,
    },
    /// Factor-error sweep over the first noise group's variance.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Classify a test set with a saved model, or fit every configured
    /// method on `data.train` and score it on `data.test`.
    Classify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// With `--model`: `kplanes` classifies by nearest affine subspace.
        #[arg(long)]
        method: Option<Method>,
    },
    /// Turn a trajectory CSV into noisy train and test datasets.
    IngestTrajectories {
        #[command(flatten)]
        common: Common,
        trajectories: PathBuf,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub methods: Option<Vec<Method>>,
    pub synth: Option<SynthConfig>,
    pub fit: Option<FitSection>,
    pub data: Option<DataSection>,
    pub benchmark: Option<BenchmarkSection>,
    pub trajectories: Option<TrajectorySection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitName {
    Mppca,
    Kplanes,
    Kmeanspp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub rank: Option<usize>,
    pub components: Option<usize>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_init")]
    pub init: InitName,
    #[serde(default = "default_kplanes_iters")]
    pub kplanes_iters: usize,
}

fn default_max_iters() -> usize {
    FitOptions::default().max_iters
}
fn default_rel_tol() -> f64 {
    FitOptions::default().rel_tol
}
fn default_init() -> InitName {
    InitName::Mppca
}
fn default_kplanes_iters() -> usize {
    FitOptions::default().kplanes_iters
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            rank: None,
            components: None,
            max_iters: default_max_iters(),
            rel_tol: default_rel_tol(),
            init: default_init(),
            kplanes_iters: default_kplanes_iters(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    /// Generating model; `fit` then reports aligned factor errors.
    pub truth: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    /// Explicit grid; otherwise `start..=stop` in steps of `step`.
    pub v1: Option<Vec<f64>>,
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub step: Option<f64>,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySection {
    #[serde(default = "default_shares")]
    pub shares: Vec<f64>,
    #[serde(default = "default_snr")]
    pub snr_db: Vec<f64>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_shares() -> Vec<f64> {
    NoiseProtocol::default().shares
}
fn default_snr() -> Vec<f64> {
    NoiseProtocol::default().snr_db
}
fn default_test_fraction() -> f64 {
    0.2
}

impl Default for TrajectorySection {
    fn default() -> Self {
        TrajectorySection {
            shares: default_shares(),
            snr_db: default_snr(),
            test_fraction: default_test_fraction(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::parse(&fs::read_to_string(p)?),
            None => Ok(RunConfig::default()),
        }
    }
}

/// Outcome of a successful command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    Degenerate,
}

pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(Outcome::Done) => EXIT_OK,
        Ok(Outcome::Degenerate) => EXIT_DEGENERATE,
        Err(Error::Io(_)) => EXIT_IO,
        Err(Error::Csv(e)) if e.is_io_error() => EXIT_IO,
        Err(_) => EXIT_USAGE,
    }
}

struct Ctx {
    command: &'static str,
    config: RunConfig,
    seed: u64,
    out: PathBuf,
    outputs: Vec<String>,
}

impl Ctx {
    fn new(command: &'static str, common: &Common) -> Result<Self> {
        let config = RunConfig::load(common.config.as_deref())?;
        let seed = common.seed.or(config.seed).unwrap_or(0);
        let out = common
            .out
            .clone()
            .or_else(|| config.out.clone())
            .ok_or_else(|| Error::InvalidConfig("no output directory (use --out)".into()))?;
        if !out.is_dir() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("output directory {} does not exist", out.display()),
            )));
        }
        Ok(Ctx {
            command,
            config,
            seed,
            out,
            outputs: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn fit_section(&self) -> FitSection {
        self.config.fit.clone().unwrap_or_default()
    }

    fn fit_options(&self) -> Result<FitOptions> {
        let f = self.fit_section();
        let opts = FitOptions {
            max_iters: f.max_iters,
            rel_tol: f.rel_tol,
            init: match f.init {
                InitName::Mppca => Init::FromMppca,
                InitName::Kplanes => Init::FromKPlanes,
                InitName::Kmeanspp => Init::FromKMeansPP,
            },
            seed: self.seed,
            kplanes_iters: f.kplanes_iters,
        };
        opts.validate()?;
        Ok(opts)
    }

    fn methods(&self) -> Vec<Method> {
        self.config.methods.clone().unwrap_or_else(|| Method::ALL.to_vec())
    }

    /// Writes `run.json` with the parsed configuration and output names.
    fn finish(mut self, extra: serde_json::Value) -> Result<()> {
        let path = self.path("run.json");
        let record = serde_json::json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "config": self.config,
            "outputs": self.outputs,
            "details": extra,
        });
        let text = serde_json::to_string_pretty(&record).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Generate { common } => cmd_generate(&common),
        Command::Fit {
            common,
            dataset,
            method,
        } => cmd_fit(&common, dataset, method),
        Command::Benchmark { common, threads } => cmd_benchmark(&common, threads),
        Command::Classify {
            common,
            model,
            test,
            method,
        } => cmd_classify(&common, model, test, method),
        Command::IngestTrajectories { common, trajectories } => cmd_ingest(&common, &trajectories),
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

pub fn cmd_generate(common: &Common) -> Result<Outcome> {
    let mut ctx = Ctx::new("generate", common)?;
    let mut synth = ctx
        .config
        .synth
        .clone()
        .ok_or_else(|| Error::InvalidConfig("`generate` needs a [synth] section".into()))?;
    synth.seed = ctx.seed;
    let (dataset, truth) = generate(&synth)?;
    write_dataset(&dataset, &ctx.path("dataset.csv"))?;
    let hyper = Hyper {
        dim: synth.dim,
        rank: synth.rank,
        components: synth.n_components(),
        groups: synth.n_groups(),
    };
    let truth_written = if truth.variances.iter().all(|&v| v >= crate::model::VARIANCE_FLOOR) && synth.rank < synth.dim {
        save_model(&truth, &hyper, &ctx.path("truth.model"))?;
        true
    } else {
        log::warn!("generating model has zero variance or full rank; truth.model not written");
        false
    };
    println!("seed {}", ctx.seed);
    println!("samples {} dimension {}", dataset.len(), dataset.dim());
    for (l, row) in synth.counts.iter().enumerate() {
        let counts: Vec<String> = row.iter().map(usize::to_string).collect();
        println!("group {} counts {}", l + 1, counts.join(" "));
    }
    ctx.finish(serde_json::json!({ "samples": dataset.len(), "truth_written": truth_written }))?;
    Ok(Outcome::Done)
}

#[derive(Debug, Serialize)]
struct FitRecord<'a> {
    method: Method,
    #[serde(flatten)]
    report: &'a FitReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    factor_errors: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct KPlanesRecord {
    method: Method,
    iterations: usize,
    converged: bool,
    objective_trace: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    factor_errors: Option<Vec<f64>>,
}

/// K-Planes result in model-file form: `factor_estimate` factors, subspace
/// means, per-cluster residual variances and size-proportional weights.
pub fn kplanes_params(dataset: &Dataset, state: &KPlanesState) -> ModelParams {
    let rank = state.bases[0].ncols();
    let mut params = params_from_clusters(dataset, state.n_components(), rank, &state.assignment, NoiseKind::Component);
    for j in 0..state.n_components() {
        params.factors[j] = state.factor_estimate(j);
        params.means[j] = state.means[j].clone();
    }
    params
}

pub fn cmd_fit(common: &Common, dataset_path: Option<PathBuf>, method: Option<Method>) -> Result<Outcome> {
    let mut ctx = Ctx::new("fit", common)?;
    let data = ctx.config.data.clone().unwrap_or_default();
    let path = dataset_path
        .or(data.path.clone())
        .ok_or_else(|| Error::InvalidConfig("no dataset (positional argument or data.path)".into()))?;
    let dataset = read_dataset(&path)?;
    let method = method
        .or_else(|| ctx.config.methods.as_ref().and_then(|m| m.first().copied()))
        .unwrap_or(Method::Hemppcat);
    let section = ctx.fit_section();
    let synth = ctx.config.synth.as_ref();
    let rank = section
        .rank
        .or(synth.map(|s| s.rank))
        .ok_or_else(|| Error::InvalidConfig("fit.rank is required".into()))?;
    let components = section
        .components
        .or(synth.map(|s| s.n_components()))
        .ok_or_else(|| Error::InvalidConfig("fit.components is required".into()))?;
    let options = ctx.fit_options()?;
    let truth = data.truth.as_deref().map(load_model).transpose()?;
    let errors_against = |factors: &[nalgebra::DMatrix<f64>]| -> Result<Option<Vec<f64>>> {
        truth
            .as_ref()
            .map(|(t, _)| align_factors(factors, &t.factors).map(|r| r.1))
            .transpose()
    };

    let outcome = match method {
        Method::Kplanes => {
            let state = kplanes(&dataset, components, rank, options.kplanes_iters, SeedChain::new(ctx.seed).named("kplanes"))?;
            let params = kplanes_params(&dataset, &state);
            let hyper = Hyper::new(dataset.dim(), rank, components, dataset.n_groups())?;
            save_model(&params, &hyper, &ctx.path("model.txt"))?;
            let record = KPlanesRecord {
                method,
                iterations: state.iterations,
                converged: state.converged,
                objective_trace: state.objective_trace.clone(),
                factor_errors: errors_against(&params.factors)?,
            };
            fs::write(ctx.path("report.json"), to_json(&record)?)?;
            Outcome::Done
        }
        Method::Mppca | Method::Hemppcat => {
            let hyper = Hyper::new(dataset.dim(), rank, components, dataset.n_groups())?;
            let (params, report) = if method == Method::Mppca {
                let opts = FitOptions {
                    init: match options.init {
                        Init::FromMppca => Init::FromKPlanes,
                        ref other => other.clone(),
                    },
                    ..options.clone()
                };
                crate::baselines::mppca_fit(&dataset, components, rank, &opts)?
            } else {
                fit(&dataset, &hyper, &options)?
            };
            save_model(&params, &hyper, &ctx.path("model.txt"))?;
            let record = FitRecord {
                method,
                report: &report,
                factor_errors: errors_against(&params.factors)?,
            };
            fs::write(ctx.path("report.json"), to_json(&record)?)?;
            println!(
                "{method}: {} iterations, stop {:?}, log-likelihood {}",
                report.iterations,
                report.stop_reason,
                report.final_log_likelihood()
            );
            if report.stop_reason == StopReason::Degenerate {
                eprintln!("fit degenerate: {}", report.degeneracy.as_deref().unwrap_or(""));
                Outcome::Degenerate
            } else {
                Outcome::Done
            }
        }
    };
    ctx.finish(serde_json::json!({ "dataset": path, "method": method }))?;
    Ok(outcome)
}

pub fn cmd_benchmark(common: &Common, threads: usize) -> Result<Outcome> {
    let mut ctx = Ctx::new("benchmark", common)?;
    let base = ctx
        .config
        .synth
        .clone()
        .ok_or_else(|| Error::InvalidConfig("`benchmark` needs a [synth] section".into()))?;
    let b = ctx
        .config
        .benchmark
        .clone()
        .ok_or_else(|| Error::InvalidConfig("`benchmark` needs a [benchmark] section".into()))?;
    let values = match (&b.v1, b.start, b.stop, b.step) {
        (Some(v), None, None, None) => v.clone(),
        (None, Some(a), Some(z), Some(s)) => grid(a, z, s)?,
        _ => {
            return Err(Error::InvalidConfig(
                "benchmark needs either `v1` or all of `start`, `stop`, `step`".into(),
            ))
        }
    };
    let config = SweepConfig {
        base,
        grid: values,
        replicates: b.replicates,
        methods: ctx.methods(),
        fit: ctx.fit_options()?,
        seed: ctx.seed,
        threads,
    };
    let result = run_v1_sweep(&config)?;
    result.write_csv(fs::File::create(ctx.path("sweep.csv"))?)?;
    println!("{} rows written", result.rows.len());
    ctx.finish(serde_json::json!({ "rows": result.rows.len() }))?;
    Ok(Outcome::Done)
}

/// Nearest affine subspace for a model whose factors span the subspaces.
fn predict_by_span(params: &ModelParams, test: &Table) -> Result<Vec<usize>> {
    let state = KPlanesState {
        bases: params.factors.iter().map(|f| f.clone().qr().q()).collect(),
        means: params.means.clone(),
        singular_values: vec![Vec::new(); params.n_components()],
        counts: vec![0; params.n_components()],
        assignment: Vec::new(),
        objective: 0.0,
        objective_trace: Vec::new(),
        iterations: 0,
        converged: true,
    };
    predict_nearest_subspace(&state, &test.samples)
}

pub fn cmd_classify(
    common: &Common,
    model: Option<PathBuf>,
    test: Option<PathBuf>,
    method: Option<Method>,
) -> Result<Outcome> {
    let mut ctx = Ctx::new("classify", common)?;
    let data = ctx.config.data.clone().unwrap_or_default();
    let test_path = test
        .or(data.test.clone())
        .ok_or_else(|| Error::InvalidConfig("no test set (--test or data.test)".into()))?;
    let table = read_table_file(&test_path)?;
    if table.is_empty() {
        return Err(Error::InvalidDataset("empty test set".into()));
    }

    if let Some(model_path) = model {
        let (params, hyper) = load_model(&model_path)?;
        if table.samples.nrows() != hyper.dim {
            return Err(Error::DimensionMismatch(format!(
                "test samples have dimension {}, model has {}",
                table.samples.nrows(),
                hyper.dim
            )));
        }
        let method = method.unwrap_or(match params.noise {
            NoiseKind::Group => Method::Hemppcat,
            NoiseKind::Component => Method::Mppca,
        });
        let predictions = match method {
            Method::Kplanes => predict_by_span(&params, &table)?,
            _ => Classifier::new(&params)?.predict(&table.samples, &table.groups)?,
        };
        let mut wtr = csv::Writer::from_path(ctx.path("predictions.csv"))?;
        wtr.write_record(["index", "group", "prediction"])?;
        for (i, p) in predictions.iter().enumerate() {
            wtr.write_record([(i + 1).to_string(), (table.groups[i] + 1).to_string(), (p + 1).to_string()])?;
        }
        wtr.flush()?;
        if let Some(labels) = &table.labels {
            let classes = labels
                .iter()
                .copied()
                .max()
                .map_or(0, |m| m + 1)
                .max(params.n_components());
            let rows = report_rows(method.as_str(), &predictions, labels, &table.groups, classes, true)?;
            write_report(&rows, fs::File::create(ctx.path("report.csv"))?)?;
        }
        ctx.finish(serde_json::json!({ "model": model_path, "test": test_path, "method": method }))?;
        return Ok(Outcome::Done);
    }

    let train_path = data
        .train
        .clone()
        .ok_or_else(|| Error::InvalidConfig("without --model, data.train is required".into()))?;
    let train = read_dataset(&train_path)?;
    let rank = ctx
        .fit_section()
        .rank
        .ok_or_else(|| Error::InvalidConfig("fit.rank is required".into()))?;
    let rows = classification_report(
        &train,
        &table,
        rank,
        &ctx.methods(),
        &ctx.fit_options()?,
        SeedChain::new(ctx.seed),
    )?;
    write_report(&rows, fs::File::create(ctx.path("report.csv"))?)?;
    for r in rows.iter().filter(|r| r.group == "overall") {
        println!("{} overall error {:.4}", r.method, r.error_rate);
    }
    ctx.finish(serde_json::json!({ "train": train_path, "test": test_path }))?;
    Ok(Outcome::Done)
}

pub fn cmd_ingest(common: &Common, trajectories: &Path) -> Result<Outcome> {
    let mut ctx = Ctx::new("ingest-trajectories", common)?;
    let section = ctx.config.trajectories.clone().unwrap_or_default();
    let protocol = NoiseProtocol {
        shares: section.shares.clone(),
        snr_db: section.snr_db.clone(),
    };
    let traj = read_trajectories(fs::File::open(trajectories)?)?;
    let seed = SeedChain::new(ctx.seed);
    let (noisy, variances) = add_group_noise(&traj, &protocol, seed)?;
    let labels = noisy.labels().expect("trajectory datasets carry body labels");
    let (train_idx, test_idx) = stratified_split(labels, section.test_fraction, seed)?;
    write_dataset(&noisy, &ctx.path("dataset.csv"))?;
    write_table(&subset_table(&noisy, &train_idx), fs::File::create(ctx.path("train.csv"))?)?;
    write_table(&subset_table(&noisy, &test_idx), fs::File::create(ctx.path("test.csv"))?)?;
    println!(
        "{} trajectories, {} frames, {} bodies; train {} test {}",
        traj.len(),
        traj.frames.len(),
        traj.n_bodies(),
        train_idx.len(),
        test_idx.len()
    );
    ctx.finish(serde_json::json!({
        "trajectories": trajectories,
        "noise_variances": variances,
        "group_sizes": noisy.group_sizes(),
    }))?;
    Ok(Outcome::Done)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = run(cli);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    exit_code(&result)
}
