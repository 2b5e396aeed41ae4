//! Studentised sup-norm statistic and its Gaussian multiplier bootstrap.
//!
//! Rows of an estimate sequence are grouped into `ω = ⌊rows / B⌋` consecutive
//! batches of size `B` (trailing rows are dropped). With batch sums
//! `S_bk = Σ_{i ∈ L_b} (Y_ik - Ȳ_k)` the variance estimate is
//! `Υ̂_kk = Σ_b S_bk² / (B ω)` and the statistic is
//! `T = √rows · max_k |Ȳ_k| / √Υ̂_kk` (one-sided columns without the absolute
//! value). A bootstrap replicate draws `e_1..e_ω ~ N(0,1)` and takes the same
//! max over `Σ_b e_b S_bk / √(B ω Υ̂_kk)`.
//!
//! Replicate `j` of a run with seed `s` takes its multipliers from
//! `ChaCha20Rng::seed_from_u64(s)` on stream `j`, so replicates can be
//! evaluated in any order.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::estimators::{
    build_estimate_matrix, column_means, sample_covariance, EstimateSequence, EstimatorError, StatisticMode,
};
use crate::model::SampleMatrix;
use crate::seed::{self, stream};
use crate::tree::{enumerate_constraints, ConstraintSystem, LatentTree, TreeError};

/// Columns whose variance estimate falls below this are dropped.
pub const DIAG_FLOOR: f64 = 1e-300;

const CHUNK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BootstrapError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{rows} rows with batch size {batch} give {omega} batches; at least 2 are needed")]
    TooFewBatches { rows: usize, batch: usize, omega: usize },
    #[error("every column has a degenerate variance estimate")]
    Degenerate,
    #[error("the Hotelling statistic is limited to m <= 8, got m = {0}")]
    TooManyVariables(usize),
    #[error("the Hotelling statistic needs n > K: n = {n}, K = {k}")]
    TooFewSamples { n: usize, k: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapConfig {
    pub batch_size: usize,
    pub num_multipliers: usize,
    pub alpha: f64,
    pub seed: u64,
    pub mode: StatisticMode,
    /// Subtract column means from the data before estimation.
    pub center: bool,
    /// Number of constraint columns to keep, drawn at random.
    pub subsample: Option<usize>,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            batch_size: 3,
            num_multipliers: 1000,
            alpha: 0.05,
            seed: 0,
            mode: StatisticMode::EqualitiesOnly,
            center: true,
            subsample: None,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), BootstrapError> {
        if self.batch_size == 0 {
            return Err(BootstrapError::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.num_multipliers == 0 {
            return Err(BootstrapError::InvalidConfig("number of multipliers must be at least 1".into()));
        }
        check_alpha(self.alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<(), BootstrapError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(BootstrapError::InvalidConfig(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub quantile: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub k_effective: usize,
    pub diag_floor_hits: usize,
    pub num_multipliers: usize,
}

fn num_batches(rows: usize, batch: usize) -> Result<usize, BootstrapError> {
    let omega = rows / batch.max(1);
    if batch == 0 || omega < 2 {
        return Err(BootstrapError::TooFewBatches { rows, batch, omega });
    }
    Ok(omega)
}

/// `ω × K` matrix of centred batch sums.
fn batch_sums(seq: &EstimateSequence, batch: usize) -> Result<(DVector<f64>, DMatrix<f64>), BootstrapError> {
    let omega = num_batches(seq.rows(), batch)?;
    let means = column_means(seq)?;
    let mut sums = DMatrix::zeros(omega, seq.num_columns());
    for k in 0..seq.num_columns() {
        let col = seq.column(k);
        for b in 0..omega {
            sums[(b, k)] = col[b * batch..(b + 1) * batch].iter().map(|y| y - means[k]).sum();
        }
    }
    Ok((means, sums))
}

/// `diag(Υ̂)`, one entry per column.
pub fn batched_diag(seq: &EstimateSequence, batch: usize) -> Result<DVector<f64>, BootstrapError> {
    let (_, sums) = batch_sums(seq, batch)?;
    let denom = (batch * sums.nrows()) as f64;
    Ok(DVector::from_iterator(
        sums.ncols(),
        sums.column_iter().map(|c| c.norm_squared() / denom),
    ))
}

/// Everything the bootstrap needs from an estimate sequence.
#[derive(Clone, Debug)]
pub struct Studentized {
    /// Batch sums scaled by `1 / √(B ω Υ̂_kk)`, kept columns only.
    scaled_sums: DMatrix<f64>,
    one_sided: Vec<bool>,
    kept: Vec<usize>,
    statistic: f64,
    floor_hits: usize,
}

impl Studentized {
    pub fn new(seq: &EstimateSequence, batch: usize) -> Result<Self, BootstrapError> {
        let (means, sums) = batch_sums(seq, batch)?;
        let omega = sums.nrows();
        let denom = (batch * omega) as f64;
        let root_rows = (seq.rows() as f64).sqrt();
        let mut kept = Vec::new();
        let mut statistic = f64::NEG_INFINITY;
        for k in 0..seq.num_columns() {
            let diag = sums.column(k).norm_squared() / denom;
            if diag.is_nan() || diag < DIAG_FLOOR {
                continue;
            }
            kept.push(k);
            let z = root_rows * means[k] / diag.sqrt();
            statistic = statistic.max(if seq.columns()[k].one_sided { z } else { z.abs() });
        }
        if kept.is_empty() {
            return Err(BootstrapError::Degenerate);
        }
        let mut scaled_sums = DMatrix::zeros(omega, kept.len());
        for (j, &k) in kept.iter().enumerate() {
            // B ω Υ̂_kk = Σ_b S_bk²
            let scale = 1.0 / sums.column(k).norm();
            scaled_sums.set_column(j, &(sums.column(k) * scale));
        }
        let one_sided = kept.iter().map(|&k| seq.columns()[k].one_sided).collect();
        let floor_hits = seq.num_columns() - kept.len();
        Ok(Studentized { scaled_sums, one_sided, kept, statistic, floor_hits })
    }

    pub fn statistic(&self) -> f64 {
        self.statistic
    }

    pub fn num_batches(&self) -> usize {
        self.scaled_sums.nrows()
    }

    pub fn k_effective(&self) -> usize {
        self.kept.len()
    }

    pub fn floor_hits(&self) -> usize {
        self.floor_hits
    }

    /// Indices (into the sequence) of the columns that entered the statistic.
    pub fn kept_columns(&self) -> &[usize] {
        &self.kept
    }

    /// `E × ω` multipliers for replicates `start..start + len`.
    pub fn multipliers(&self, seed: u64, start: usize, len: usize) -> DMatrix<f64> {
        let omega = self.num_batches();
        let mut m = DMatrix::zeros(len, omega);
        for r in 0..len {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream((start + r) as u64);
            for b in 0..omega {
                m[(r, b)] = rng.sample(StandardNormal);
            }
        }
        m
    }

    /// Pre-norm coordinates `Σ_b e_b S_bk / √(B ω Υ̂_kk)` for each row of
    /// `multipliers` (`E × ω`).
    pub fn coordinates_with(&self, multipliers: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(multipliers.ncols(), self.num_batches(), "one multiplier per batch");
        multipliers * &self.scaled_sums
    }

    /// Sup-norm draws for explicitly given multipliers.
    pub fn draws_with(&self, multipliers: &DMatrix<f64>) -> Vec<f64> {
        let coords = self.coordinates_with(multipliers);
        (0..coords.nrows())
            .map(|r| {
                coords
                    .row(r)
                    .iter()
                    .zip(&self.one_sided)
                    .map(|(&z, &one)| if one { z } else { z.abs() })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    /// `e` draws, replicate order preserved.
    pub fn draws(&self, e: usize, seed: u64) -> Vec<f64> {
        let chunks: Vec<usize> = (0..e).step_by(CHUNK).collect();
        let parts: Vec<Vec<f64>> = chunks
            .par_iter()
            .map(|&start| {
                let len = CHUNK.min(e - start);
                self.draws_with(&self.multipliers(seed, start, len))
            })
            .collect();
        parts.concat()
    }

    pub fn coordinates(&self, e: usize, seed: u64) -> DMatrix<f64> {
        self.coordinates_with(&self.multipliers(seed, 0, e))
    }
}

pub fn test_statistic(seq: &EstimateSequence, batch: usize) -> Result<f64, BootstrapError> {
    Ok(Studentized::new(seq, batch)?.statistic())
}

pub fn multiplier_draws(seq: &EstimateSequence, batch: usize, e: usize, seed: u64) -> Result<Vec<f64>, BootstrapError> {
    Ok(Studentized::new(seq, batch)?.draws(e, seed))
}

/// `E × K_eff` pre-norm bootstrap coordinates; each is exactly standard
/// normal given the data.
pub fn bootstrap_coordinates(
    seq: &EstimateSequence,
    batch: usize,
    e: usize,
    seed: u64,
) -> Result<DMatrix<f64>, BootstrapError> {
    Ok(Studentized::new(seq, batch)?.coordinates(e, seed))
}

/// Order statistic `⌈(1 - α) E⌉` (1-based) of sorted draws; the smallest
/// draw when that index is 0.
pub fn quantile(sorted: &[f64], alpha: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of no draws");
    let e = sorted.len();
    let idx = ((1.0 - alpha) * e as f64 - 1e-9).ceil().clamp(1.0, e as f64) as usize;
    sorted[idx - 1]
}

/// Statistic plus sorted bootstrap draws; one calibration serves any level.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub statistic: f64,
    pub draws: Vec<f64>,
    pub k_effective: usize,
    pub diag_floor_hits: usize,
}

impl Calibration {
    pub fn from_sequence(seq: &EstimateSequence, batch: usize, e: usize, seed: u64) -> Result<Self, BootstrapError> {
        let st = Studentized::new(seq, batch)?;
        let mut draws = st.draws(e, seed);
        draws.sort_by(f64::total_cmp);
        Ok(Calibration {
            statistic: st.statistic(),
            draws,
            k_effective: st.k_effective(),
            diag_floor_hits: st.floor_hits(),
        })
    }

    pub fn decide(&self, alpha: f64) -> TestResult {
        let q = quantile(&self.draws, alpha);
        let above = self.draws.len() - self.draws.partition_point(|&d| d < self.statistic);
        TestResult {
            statistic: self.statistic,
            quantile: q,
            p_value: (above + 1) as f64 / (self.draws.len() + 1) as f64,
            reject: self.statistic > q,
            alpha,
            k_effective: self.k_effective,
            diag_floor_hits: self.diag_floor_hits,
            num_multipliers: self.draws.len(),
        }
    }
}

/// Estimates after optional centring and column subsampling. The subsample
/// is drawn from `derive_seed(config.seed, SUBSAMPLE, 0)`.
pub fn estimate(data: &SampleMatrix, cs: &ConstraintSystem, config: &BootstrapConfig) -> Result<EstimateSequence, BootstrapError> {
    let centered;
    let data = if config.center {
        centered = data.centered();
        &centered
    } else {
        data
    };
    let subsample = config.subsample.map(|k| (k, seed::derive_seed(config.seed, stream::SUBSAMPLE, 0)));
    Ok(build_estimate_matrix(data, cs, config.mode, subsample)?)
}

/// Multipliers use seed `derive_seed(config.seed, MULTIPLIERS, 0)`.
pub fn calibrate(data: &SampleMatrix, cs: &ConstraintSystem, config: &BootstrapConfig) -> Result<Calibration, BootstrapError> {
    config.validate()?;
    let seq = estimate(data, cs, config)?;
    let mult_seed = seed::derive_seed(config.seed, stream::MULTIPLIERS, 0);
    Calibration::from_sequence(&seq, config.batch_size, config.num_multipliers, mult_seed)
}

pub fn run_test(data: &SampleMatrix, cs: &ConstraintSystem, config: &BootstrapConfig) -> Result<TestResult, BootstrapError> {
    Ok(calibrate(data, cs, config)?.decide(config.alpha))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hotelling {
    pub statistic: f64,
    /// Number of tetrad equalities `K`.
    pub dof: usize,
    /// Rank used for the pseudo-inverse.
    pub rank: usize,
    /// Numerical rank at relative cutoff `1e-10`, before the cap.
    pub numerical_rank: usize,
}

/// `n τ(S)ᵀ V⁺ τ(S)` over the equality polynomials of `tree`.
///
/// `V = G Γ Gᵀ` is the Gaussian asymptotic covariance of `√n τ(S)`: `G` holds
/// the gradients with respect to the distinct entries `σ_ab` (`a <= b`) and
/// `Γ_(ab),(cd) = S_ac S_bd + S_ad S_bc`. The pseudo-inverse keeps the
/// eigenvalues above `1e-10` times the largest, and at most as many as the
/// codimension of the model, which is the rank of `V` at points of the model.
/// The data are used as given; centre them first if needed.
pub fn hotelling_statistic(data: &SampleMatrix, tree: &LatentTree) -> Result<Hotelling, BootstrapError> {
    let m = tree.num_observed();
    if m > 8 {
        return Err(BootstrapError::TooManyVariables(m));
    }
    let cs = enumerate_constraints(tree)?;
    if data.m() != m {
        return Err(EstimatorError::DimensionMismatch { expected: m, got: data.m() }.into());
    }
    let k = cs.num_equality_columns();
    let n = data.n();
    if n <= k {
        return Err(BootstrapError::TooFewSamples { n, k });
    }
    if k == 0 {
        return Ok(Hotelling { statistic: 0.0, dof: 0, rank: 0, numerical_rank: 0 });
    }
    let s = sample_covariance(data);
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| (a..m).map(move |b| (a, b))).collect();
    let polys: Vec<_> = cs.equality_columns().map(|c| cs.polynomial(c)).collect();
    let tau = DVector::from_iterator(k, polys.iter().map(|p| p.eval(&s)));
    let g = DMatrix::from_fn(k, pairs.len(), |j, u| polys[j].derivative(&s, pairs[u].0, pairs[u].1));
    let gamma = DMatrix::from_fn(pairs.len(), pairs.len(), |u, v| {
        let ((a, b), (c, d)) = (pairs[u], pairs[v]);
        s[(a, c)] * s[(b, d)] + s[(a, d)] * s[(b, c)]
    });
    let v = &g * gamma * g.transpose();
    let v = (&v + v.transpose()) * 0.5;
    let eig = SymmetricEigen::new(v);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let top = eig.eigenvalues[order[0]];
    let numerical_rank = if top > 0.0 {
        order.iter().filter(|&&i| eig.eigenvalues[i] > 1e-10 * top).count()
    } else {
        0
    };
    let rank = numerical_rank.min(tree.model_codimension());
    let statistic = order[..rank]
        .iter()
        .map(|&i| {
            let proj = eig.eigenvectors.column(i).dot(&tau);
            proj * proj / eig.eigenvalues[i]
        })
        .sum::<f64>()
        * n as f64;
    Ok(Hotelling { statistic, dof: k, rank, numerical_rank })
}
