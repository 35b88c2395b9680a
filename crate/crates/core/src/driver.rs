//! Fit loop: initialization, E/M alternation and convergence bookkeeping.

use std::time::Instant;

use log::{debug, warn};

use crate::baselines::{kmeanspp_seed, kplanes, nearest_center, params_from_clusters, KPlanesState};
use crate::error::{Error, Result};
use crate::estep::accumulate;
use crate::likelihood::responsibilities;
use crate::model::{check_dataset, validate_params, Dataset, FitReport, Hyper, ModelParams, NoiseKind, StopReason};
use crate::mstep::gem_sweep;
use crate::rng::SeedChain;

/// Per-step slack allowed on the observed log-likelihood trace.
pub const MONOTONE_TOL: f64 = 1e-8;

/// Iteration budget of the MPPCA fit used as a starting point.
pub const MPPCA_INIT_MAX_ITERS: usize = 500;
pub const MPPCA_INIT_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// K-Planes, then MPPCA, then map per-component variances onto groups.
    FromMppca,
    /// K-Planes clustering converted to parameters.
    FromKPlanes,
    /// K-Means++ seeds and a nearest-center clustering.
    FromKMeansPP,
    Explicit(ModelParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iters: usize,
    /// Stop once `|LL_t - LL_{t-1}| <= rel_tol * (1 + |LL_t|)`.
    pub rel_tol: f64,
    pub init: Init,
    pub seed: u64,
    /// K-Planes rounds used by the K-Planes-based initializers.
    pub kplanes_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iters: 500,
            rel_tol: 1e-7,
            init: Init::FromMppca,
            seed: 0,
            kplanes_iters: 1000,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig("rel_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Iterates GEM sweeps from `init` until the relative log-likelihood change
/// drops below `rel_tol`, `max_iters` sweeps have run, or a sweep hits a
/// degenerate component. In the last case the parameters of the final
/// successful E-step are returned.
pub fn run_em(
    dataset: &Dataset,
    init: ModelParams,
    max_iters: usize,
    rel_tol: f64,
) -> Result<(ModelParams, FitReport)> {
    if max_iters == 0 {
        return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
    }
    let start = Instant::now();
    let mut params = init;
    let mut stats = accumulate(dataset, &params)?;
    let mut trace = vec![stats.log_likelihood()];
    let mut stop_reason = StopReason::MaxIters;
    let mut degeneracy = None;
    let mut iterations = 0;

    for it in 1..=max_iters {
        let next = gem_sweep(&stats).and_then(|p| {
            let s = accumulate(dataset, &p)?;
            if s.log_likelihood().is_finite() {
                Ok((p, s))
            } else {
                Err(Error::InvalidDataset("non-finite log-likelihood".into()))
            }
        });
        let (next_params, next_stats) = match next {
            Ok(v) => v,
            Err(e) if e.is_degenerate() || it > 1 || matches!(e, Error::InvalidDataset(_)) => {
                debug!("sweep {it} degenerate: {e}");
                stop_reason = StopReason::Degenerate;
                degeneracy = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let prev = *trace.last().expect("trace starts non-empty");
        let ll = next_stats.log_likelihood();
        if ll < prev - MONOTONE_TOL * (1.0 + ll.abs()) {
            warn!("log-likelihood decreased at sweep {it}: {prev} -> {ll}");
        }
        debug_assert!(
            ll >= prev - MONOTONE_TOL * (1.0 + ll.abs()),
            "GEM sweep {it} decreased the log-likelihood: {prev} -> {ll}"
        );
        trace.push(ll);
        params = next_params;
        stats = next_stats;
        iterations = it;
        if (ll - prev).abs() <= rel_tol * (1.0 + ll.abs()) {
            stop_reason = StopReason::Tolerance;
            break;
        }
    }

    let report = FitReport {
        ll_trace: trace,
        iterations,
        converged: stop_reason == StopReason::Tolerance,
        stop_reason,
        degeneracy,
        elapsed_secs: start.elapsed().as_secs_f64(),
    };
    Ok((params, report))
}

/// Fits the heteroscedastic mixture.
pub fn fit(dataset: &Dataset, hyper: &Hyper, options: &FitOptions) -> Result<(ModelParams, FitReport)> {
    hyper.validate()?;
    options.validate()?;
    check_dataset(dataset, hyper)?;
    if dataset.n_groups() != hyper.groups {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} noise groups, hyperparameters say {}",
            dataset.n_groups(),
            hyper.groups
        )));
    }
    if dataset.len() < hyper.components {
        return Err(Error::InvalidDataset(format!(
            "{} samples cannot support {} components",
            dataset.len(),
            hyper.components
        )));
    }
    let seed = SeedChain::new(options.seed);
    let init = match &options.init {
        Init::FromMppca => mppca_chain(dataset, hyper, seed, &mppca_init_options(options))?.init,
        Init::FromKPlanes => {
            let state = kplanes(dataset, hyper.components, hyper.rank, options.kplanes_iters, seed.named("kplanes"))?;
            params_from_clusters(dataset, hyper.components, hyper.rank, &state.assignment, NoiseKind::Group)
        }
        Init::FromKMeansPP => init_from_kmeanspp(dataset, hyper, options.seed)?,
        Init::Explicit(p) => {
            if p.noise != NoiseKind::Group {
                return Err(Error::InvalidConfig(
                    "explicit initialization needs per-group variances".into(),
                ));
            }
            p.clone()
        }
    };
    validate_params(&init, hyper)?;
    run_em(dataset, init, options.max_iters, options.rel_tol)
}

fn mppca_init_options(options: &FitOptions) -> FitOptions {
    FitOptions {
        max_iters: MPPCA_INIT_MAX_ITERS,
        rel_tol: MPPCA_INIT_REL_TOL,
        init: Init::FromKPlanes,
        seed: options.seed,
        kplanes_iters: options.kplanes_iters,
    }
}

/// Intermediate results of the K-Planes -> MPPCA -> heteroscedastic chain.
#[derive(Debug, Clone)]
pub struct MppcaChain {
    pub kplanes: KPlanesState,
    pub mppca: ModelParams,
    pub mppca_report: FitReport,
    /// Heteroscedastic starting point derived from `mppca`.
    pub init: ModelParams,
}

/// Runs K-Planes (seeded from `seed.named("kplanes")`), fits MPPCA from it
/// with `mppca_options` and maps the result to per-group variances.
pub fn mppca_chain(
    dataset: &Dataset,
    hyper: &Hyper,
    seed: SeedChain,
    mppca_options: &FitOptions,
) -> Result<MppcaChain> {
    let state = kplanes(
        dataset,
        hyper.components,
        hyper.rank,
        mppca_options.kplanes_iters,
        seed.named("kplanes"),
    )?;
    let start = crate::baselines::mppca_from_kplanes(dataset, &state);
    let (mppca, mppca_report) = run_em(dataset, start, mppca_options.max_iters, mppca_options.rel_tol)?;
    if mppca_report.stop_reason == StopReason::Degenerate {
        warn!(
            "MPPCA initialization ended degenerate: {}",
            mppca_report.degeneracy.as_deref().unwrap_or("")
        );
    }
    let init = hetero_from_mppca(dataset, &mppca)?;
    Ok(MppcaChain {
        kplanes: state,
        mppca,
        mppca_report,
        init,
    })
}

/// Starting point from a converged MPPCA fit (K-Planes initialized).
pub fn init_from_mppca(dataset: &Dataset, hyper: &Hyper, seed: u64) -> Result<ModelParams> {
    let options = mppca_init_options(&FitOptions {
        seed,
        ..FitOptions::default()
    });
    Ok(mppca_chain(dataset, hyper, SeedChain::new(seed), &options)?.init)
}

/// Copies factors, means and weights from an MPPCA model; each group's
/// variance is the responsibility-weighted average of the per-component
/// variances over the group's samples.
pub fn hetero_from_mppca(dataset: &Dataset, mppca: &ModelParams) -> Result<ModelParams> {
    if mppca.noise != NoiseKind::Component {
        return Err(Error::InvalidConfig("expected an MPPCA model".into()));
    }
    let resp = responsibilities(dataset, mppca)?;
    let l = dataset.n_groups();
    let mut num = vec![0.0; l];
    let sizes = dataset.group_sizes();
    for i in 0..dataset.len() {
        let v: f64 = (0..mppca.n_components())
            .map(|j| resp[(i, j)] * mppca.variances[j])
            .sum();
        num[dataset.group(i)] += v;
    }
    let variances = num
        .iter()
        .zip(&sizes)
        .map(|(&s, &c)| (s / c as f64).max(crate::model::VARIANCE_FLOOR))
        .collect();
    Ok(ModelParams {
        factors: mppca.factors.clone(),
        means: mppca.means.clone(),
        variances,
        weights: mppca.weights.clone(),
        noise: NoiseKind::Group,
    })
}

/// Starting point from K-Means++ seeds and one nearest-center assignment.
pub fn init_from_kmeanspp(dataset: &Dataset, hyper: &Hyper, seed: u64) -> Result<ModelParams> {
    let centers = kmeanspp_seed(dataset, hyper.components, SeedChain::new(seed).named("kmeans++"))?;
    let assignment = nearest_center(dataset, &centers);
    Ok(params_from_clusters(
        dataset,
        hyper.components,
        hyper.rank,
        &assignment,
        NoiseKind::Group,
    ))
}
