//! Mixture of probabilistic PCA with one isotropic variance per component.

use crate::baselines::{kmeanspp_seed, kplanes, nearest_center, params_from_clusters, KPlanesState};
use crate::driver::{run_em, FitOptions, Init};
use crate::error::{Error, Result};
use crate::model::{Dataset, FitReport, Hyper, ModelParams, NoiseKind};
use crate::rng::SeedChain;

/// MPPCA starting point from a K-Planes clustering.
pub fn mppca_from_kplanes(dataset: &Dataset, state: &KPlanesState) -> ModelParams {
    let rank = state.bases.first().map_or(1, |b| b.ncols());
    params_from_clusters(
        dataset,
        state.n_components(),
        rank,
        &state.assignment,
        NoiseKind::Component,
    )
}

/// Fits MPPCA. Group labels of `dataset` are ignored.
pub fn mppca_fit(
    dataset: &Dataset,
    components: usize,
    rank: usize,
    options: &FitOptions,
) -> Result<(ModelParams, FitReport)> {
    options.validate()?;
    let hyper = Hyper::new(dataset.dim(), rank, components, 1)?;
    if dataset.len() < components {
        return Err(Error::InvalidDataset(format!(
            "{} samples cannot support {components} components",
            dataset.len()
        )));
    }
    let seed = SeedChain::new(options.seed);
    let init = match &options.init {
        Init::FromKPlanes | Init::FromMppca => {
            let state = kplanes(dataset, components, rank, options.kplanes_iters, seed.named("kplanes"))?;
            mppca_from_kplanes(dataset, &state)
        }
        Init::FromKMeansPP => {
            let centers = kmeanspp_seed(dataset, components, seed.named("kmeans++"))?;
            let assignment = nearest_center(dataset, &centers);
            params_from_clusters(dataset, components, rank, &assignment, NoiseKind::Component)
        }
        Init::Explicit(p) => {
            if p.noise != NoiseKind::Component {
                return Err(Error::InvalidConfig(
                    "explicit MPPCA initialization needs per-component variances".into(),
                ));
            }
            p.clone()
        }
    };
    crate::model::validate_params(&init, &hyper)?;
    run_em(dataset, init, options.max_iters, options.rel_tol)
}
