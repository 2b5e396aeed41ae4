//! Empirical size of the test under one-factor (star tree) null models.
//!
//! Parameters are drawn once per study from `derive_seed(seed, PARAMS, 0)`.
//! Replication `r` samples its data with `derive_seed(seed, DATA, r)` and runs
//! the test with seed `derive_seed(seed, MULTIPLIERS, r)`. Replications run in
//! parallel; results are aggregated in replication order.

use rayon::prelude::*;
use thiserror::Error;

use crate::bootstrap::{calibrate, BootstrapConfig, BootstrapError};
use crate::estimators::StatisticMode;
use crate::model::{covariance_from_factor, sample, setup_params, ModelError, Setup};
use crate::seed::{derive_seed, stream};
use crate::tree::{enumerate_constraints, LatentTree, TreeError};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("replication {rep}: {source}")]
    Test { rep: usize, source: BootstrapError },
    #[error("invalid study: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SizeStudyConfig {
    pub setup: Setup,
    pub m: usize,
    pub n: usize,
    pub reps: usize,
    pub alphas: Vec<f64>,
    pub batch_size: usize,
    pub num_multipliers: usize,
    pub seed: u64,
    pub mode: StatisticMode,
    pub center: bool,
    pub subsample: Option<usize>,
}

impl SizeStudyConfig {
    pub fn new(setup: Setup, m: usize, n: usize, reps: usize) -> Self {
        let defaults = BootstrapConfig::default();
        SizeStudyConfig {
            setup,
            m,
            n,
            reps,
            alphas: alpha_grid(),
            batch_size: defaults.batch_size,
            num_multipliers: defaults.num_multipliers,
            seed: 0,
            mode: defaults.mode,
            center: defaults.center,
            subsample: None,
        }
    }
}

/// `0.01, 0.02, ..., 0.99`.
pub fn alpha_grid() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SizeCurve {
    pub alphas: Vec<f64>,
    pub rejections: Vec<usize>,
    pub reps: usize,
}

impl SizeCurve {
    pub fn empirical_size(&self, i: usize) -> f64 {
        self.rejections[i] as f64 / self.reps as f64
    }

    pub fn size_at(&self, alpha: f64) -> Option<f64> {
        self.alphas.iter().position(|&a| a == alpha).map(|i| self.empirical_size(i))
    }
}

pub fn size_study(cfg: &SizeStudyConfig) -> Result<SizeCurve, SimulationError> {
    if cfg.reps == 0 {
        return Err(SimulationError::Invalid("reps must be at least 1".into()));
    }
    if cfg.alphas.is_empty() || cfg.alphas.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
        return Err(SimulationError::Invalid("alphas must be non-empty and lie in (0, 1]".into()));
    }
    let params = setup_params(cfg.setup, cfg.m, derive_seed(cfg.seed, stream::PARAMS, 0))?;
    let cov = covariance_from_factor(&params)?;
    let cs = enumerate_constraints(&LatentTree::star(cfg.m)?)?;
    let base = BootstrapConfig {
        batch_size: cfg.batch_size,
        num_multipliers: cfg.num_multipliers,
        alpha: cfg.alphas[0],
        seed: 0,
        mode: cfg.mode,
        center: cfg.center,
        subsample: cfg.subsample,
    };
    base.validate().map_err(|source| SimulationError::Test { rep: 0, source })?;
    let outcomes: Vec<Vec<bool>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let data = sample(&cov, cfg.n, derive_seed(cfg.seed, stream::DATA, rep as u64))?;
            let config = BootstrapConfig { seed: derive_seed(cfg.seed, stream::MULTIPLIERS, rep as u64), ..base.clone() };
            let cal = calibrate(&data, &cs, &config).map_err(|source| SimulationError::Test { rep, source })?;
            Ok(cfg.alphas.iter().map(|&a| cal.decide(a).reject).collect())
        })
        .collect::<Result<_, SimulationError>>()?;
    let rejections = (0..cfg.alphas.len())
        .map(|i| outcomes.iter().filter(|o| o[i]).count())
        .collect();
    Ok(SizeCurve { alphas: cfg.alphas.clone(), rejections, reps: cfg.reps })
}
