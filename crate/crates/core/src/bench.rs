//! Experiment harness: the factor-error sweep over the first group's noise
//! variance and the trajectory classification trial.

use std::fmt;
use std::str::FromStr;

use log::info;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::kplanes;
use crate::driver::{mppca_chain, run_em, FitOptions, Init};
use crate::error::{Error, Result};
use crate::eval::{align_factors, best_permutation, predict_nearest_subspace, report_rows, Classifier, ReportRow};
use crate::io::Table;
use crate::model::{Dataset, Hyper, ModelParams, StopReason};
use crate::rng::SeedChain;
use crate::synth::{generate, SynthConfig};
use crate::trajectory::{add_group_noise, stratified_split, NoiseProtocol, Trajectories};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kplanes,
    Mppca,
    Hemppcat,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Kplanes, Method::Mppca, Method::Hemppcat];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Kplanes => "kplanes",
            Method::Mppca => "mppca",
            Method::Hemppcat => "hemppcat",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kplanes" => Ok(Method::Kplanes),
            "mppca" => Ok(Method::Mppca),
            "hemppcat" => Ok(Method::Hemppcat),
            _ => Err(Error::InvalidConfig(format!(
                "unknown method `{s}` (expected kplanes, mppca or hemppcat)"
            ))),
        }
    }
}

/// `start, start + step, ..., stop` computed as integer multiples of the
/// step so that e.g. `1.3` is not `1.3000000000000003`.
pub fn grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(Error::InvalidConfig("grid needs step > 0 and stop >= start".into()));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    let inv = 1.0 / step;
    let exact = (inv - inv.round()).abs() < 1e-9;
    Ok((0..count)
        .map(|i| {
            if exact {
                ((start * inv.round()).round() + i as f64) / inv.round()
            } else {
                start + i as f64 * step
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Dataset layout; the first group's variance is replaced by each grid
    /// value and the seed by the replicate's seed.
    pub base: SynthConfig,
    pub grid: Vec<f64>,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub fit: FitOptions,
    pub seed: u64,
    pub threads: usize,
}

/// Factor errors of one method on one dataset, aligned to the truth, or
/// `None` when the fit ended degenerate.
pub type CellErrors = Option<Vec<f64>>;

/// One output line: mean aligned factor error of `component` (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub v1: f64,
    pub method: Method,
    pub component: usize,
    pub mean_error: f64,
    pub n_ok: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub grid: Vec<f64>,
    pub replicates: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn validate(&self) -> Result<()> {
        if self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidDataset("grid is not strictly increasing".into()));
        }
        for r in &self.rows {
            if r.n_ok > self.replicates {
                return Err(Error::InvalidDataset("more successes than replicates".into()));
            }
            if r.n_ok > 0 && !(r.mean_error >= 0.0) {
                return Err(Error::InvalidDataset(format!("bad mean error {}", r.mean_error)));
            }
            if !self.grid.contains(&r.v1) {
                return Err(Error::InvalidDataset(format!("row for v1={} outside the grid", r.v1)));
            }
        }
        Ok(())
    }

    /// Mean error for `(v1, method, component)` with a 1-based component.
    pub fn mean(&self, v1: f64, method: Method, component: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.v1 == v1 && r.method == method && r.component == component)
            .filter(|r| r.n_ok > 0)
            .map(|r| r.mean_error)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads rows written by [`SweepResult::write_csv`]; the grid is the
    /// sorted set of `v1` values and `replicates` the largest `n_ok`.
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let rows: Vec<SweepRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
        let mut grid: Vec<f64> = Vec::new();
        for r in &rows {
            if !grid.contains(&r.v1) {
                grid.push(r.v1);
            }
        }
        grid.sort_by(f64::total_cmp);
        let replicates = rows.iter().map(|r| r.n_ok).max().unwrap_or(0);
        let out = SweepResult { grid, replicates, rows };
        out.validate()?;
        Ok(out)
    }
}

/// Per-method aligned errors on one generated dataset. K-Planes is seeded
/// from `seed.named("kplanes")`; MPPCA starts from that clustering and the
/// heteroscedastic fit starts from MPPCA.
pub fn replicate_errors(
    dataset: &Dataset,
    truth: &ModelParams,
    rank: usize,
    methods: &[Method],
    fit: &FitOptions,
    seed: SeedChain,
) -> Result<Vec<(Method, CellErrors)>> {
    let components = truth.n_components();
    let hyper = Hyper::new(dataset.dim(), rank, components, dataset.n_groups())?;
    let wants = |m| methods.contains(&m);
    let needs_em = wants(Method::Mppca) || wants(Method::Hemppcat);
    let (state, mppca, hetero) = if needs_em {
        let chain = mppca_chain(dataset, &hyper, seed, fit)?;
        let mppca_ok = chain.mppca_report.stop_reason != StopReason::Degenerate;
        let hetero = if wants(Method::Hemppcat) {
            let (p, report) = run_em(dataset, chain.init, fit.max_iters, fit.rel_tol)?;
            (report.stop_reason != StopReason::Degenerate).then_some(p)
        } else {
            None
        };
        (chain.kplanes, mppca_ok.then_some(chain.mppca), hetero)
    } else {
        let state = kplanes(dataset, components, rank, fit.kplanes_iters, seed.named("kplanes"))?;
        (state, None, None)
    };
    let errors = |factors: &[nalgebra::DMatrix<f64>]| -> Result<Vec<f64>> {
        Ok(align_factors(factors, &truth.factors)?.1)
    };
    let mut out = Vec::new();
    for &m in methods {
        let cell = match m {
            Method::Kplanes => {
                let f: Vec<_> = (0..components).map(|j| state.factor_estimate(j)).collect();
                Some(errors(&f)?)
            }
            Method::Mppca => mppca.as_ref().map(|p| errors(&p.factors)).transpose()?,
            Method::Hemppcat => hetero.as_ref().map(|p| errors(&p.factors)).transpose()?,
        };
        out.push((m, cell));
    }
    Ok(out)
}

/// Runs every replicate at every grid value. Replicate `r` uses dataset
/// seed `seed.child(r).named("data")` at all grid values, so the latent
/// draws and standardized noise are shared along the grid.
pub fn run_v1_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.base.validate()?;
    config.fit.validate()?;
    if config.replicates == 0 {
        return Err(Error::InvalidConfig("need at least one replicate".into()));
    }
    if config.methods.is_empty() {
        return Err(Error::InvalidConfig("no methods selected".into()));
    }
    if config.grid.is_empty()
        || config.grid.windows(2).any(|w| !(w[1] > w[0]))
        || config.grid.iter().any(|&v| !(v > 0.0))
    {
        return Err(Error::InvalidConfig("grid must be positive and strictly increasing".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let root = SeedChain::new(config.seed);
    let components = config.base.n_components();
    let mut rows = Vec::new();
    for (g, &v1) in config.grid.iter().enumerate() {
        let run_one = |r: usize| -> Result<Vec<(Method, CellErrors)>> {
            let rep = root.child(r as u64);
            let mut synth = config.base.clone();
            synth.variances[0] = v1;
            synth.seed = rep.named("data").seed();
            let (dataset, truth) = generate(&synth)?;
            replicate_errors(
                &dataset,
                &truth,
                config.base.rank,
                &config.methods,
                &config.fit,
                rep.child(g as u64),
            )
        };
        let results: Vec<Vec<(Method, CellErrors)>> = if config.threads <= 1 {
            (0..config.replicates).map(run_one).collect::<Result<_>>()?
        } else {
            pool.install(|| (0..config.replicates).into_par_iter().map(run_one).collect::<Result<_>>())?
        };
        for (mi, &m) in config.methods.iter().enumerate() {
            for j in 0..components {
                let ok: Vec<f64> = results
                    .iter()
                    .filter_map(|rep| rep[mi].1.as_ref().map(|e| e[j]))
                    .collect();
                let mean_error = if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().sum::<f64>() / ok.len() as f64
                };
                rows.push(SweepRow {
                    v1,
                    method: m,
                    component: j + 1,
                    mean_error,
                    n_ok: ok.len(),
                });
            }
        }
        info!("grid point {}/{} (v1 = {v1}) done", g + 1, config.grid.len());
    }
    let result = SweepResult {
        grid: config.grid.clone(),
        replicates: config.replicates,
        rows,
    };
    result.validate()?;
    Ok(result)
}

/// Fits every method on `train` and scores test predictions per noise
/// group and overall. Fitted components are named by the permutation that
/// best matches the training labels, so test labels never influence the
/// matching. Degenerate fits still report their best-so-far estimates.
pub fn classification_report(
    train: &Dataset,
    test: &Table,
    rank: usize,
    methods: &[Method],
    fit: &FitOptions,
    seed: SeedChain,
) -> Result<Vec<ReportRow>> {
    let labels = train
        .labels()
        .ok_or_else(|| Error::InvalidDataset("training data needs labels".into()))?;
    let test_labels = test
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidDataset("test data needs labels".into()))?;
    if test.is_empty() {
        return Err(Error::InvalidDataset("empty test set".into()));
    }
    let classes = labels
        .iter()
        .chain(test_labels)
        .copied()
        .max()
        .map_or(0, |m| m + 1);
    let hyper = Hyper::new(train.dim(), rank, classes, train.n_groups())?;
    let mppca_opts = FitOptions {
        init: Init::FromKPlanes,
        ..fit.clone()
    };
    let chain = mppca_chain(train, &hyper, seed, &mppca_opts)?;
    let hetero = if methods.contains(&Method::Hemppcat) {
        Some(run_em(train, chain.init.clone(), fit.max_iters, fit.rel_tol)?.0)
    } else {
        None
    };
    let mut rows = Vec::new();
    for &m in methods {
        let predict = |samples: &DMatrix<f64>, groups: &[usize]| -> Result<Vec<usize>> {
            match m {
                Method::Kplanes => predict_nearest_subspace(&chain.kplanes, samples),
                Method::Mppca => Classifier::new(&chain.mppca)?.predict(samples, groups),
                Method::Hemppcat => Classifier::new(hetero.as_ref().expect("fitted above"))?.predict(samples, groups),
            }
        };
        let perm = best_permutation(&predict(train.samples(), train.groups())?, labels, classes)?;
        let predictions: Vec<usize> = predict(&test.samples, &test.groups)?.iter().map(|&p| perm[p]).collect();
        rows.extend(report_rows(m.as_str(), &predictions, test_labels, &test.groups, classes, false)?);
    }
    Ok(rows)
}

/// Adds protocol noise to clean trajectories, splits them and runs
/// [`classification_report`].
pub fn trajectory_trial(
    traj: &Trajectories,
    protocol: &NoiseProtocol,
    test_fraction: f64,
    rank: usize,
    fit: &FitOptions,
    seed: SeedChain,
) -> Result<Vec<ReportRow>> {
    let (noisy, _) = add_group_noise(traj, protocol, seed)?;
    let (train_idx, test_idx) = stratified_split(noisy.labels().expect("bodies are labels"), test_fraction, seed)?;
    let train = noisy.select(&train_idx)?;
    let test = subset_table(&noisy, &test_idx);
    classification_report(&train, &test, rank, &Method::ALL, fit, seed)
}

/// Rows of `dataset` at `indices` as a [`Table`] (groups may go missing).
pub fn subset_table(dataset: &Dataset, indices: &[usize]) -> Table {
    let d = dataset.dim();
    let mut data = Vec::with_capacity(d * indices.len());
    for &i in indices {
        data.extend_from_slice(dataset.sample(i));
    }
    Table {
        samples: nalgebra::DMatrix::from_vec(d, indices.len(), data),
        groups: indices.iter().map(|&i| dataset.group(i)).collect(),
        labels: dataset.labels().map(|l| indices.iter().map(|&i| l[i]).collect()),
    }
}
