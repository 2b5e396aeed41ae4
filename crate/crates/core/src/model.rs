//! Gaussian latent tree distributions: covariance construction and sampling.
//!
//! Latent nodes are standardised to unit variance, so a tree model is given by
//! one correlation per edge and one standard deviation per observed node. The
//! correlation between two observed nodes is the product of edge correlations
//! along their path.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use thiserror::Error;

use crate::seed;
use crate::tree::{LatentTree, NodeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("edge correlation {value} on edge {edge} is outside (-1, 0) U (0, 1)")]
    BadCorrelation { edge: usize, value: f64 },
    #[error("standard deviation {value} for observed node {node} must be positive and finite")]
    BadStdDev { node: usize, value: f64 },
    #[error("noise variance {value} for variable {index} must be positive and finite")]
    BadNoiseVariance { index: usize, value: f64 },
    #[error("expected {expected} {what}, got {got}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error("loading of variable {0} is zero; the star reparametrisation needs nonzero loadings")]
    ZeroLoading(usize),
    #[error("tree is not a star with a latent hub")]
    NotAStar,
    #[error("covariance is not positive definite: smallest eigenvalue {min_eigenvalue:e}, largest {max_eigenvalue:e}")]
    NotPositiveDefinite { min_eigenvalue: f64, max_eigenvalue: f64 },
    #[error("covariance must be square and symmetric")]
    NotSymmetric,
    #[error("setups need m >= 4, got {0}")]
    TooFewVariables(usize),
    #[error("sample matrix: {0}")]
    BadSample(String),
}

/// Edge correlations (by edge id) and observed standard deviations (by
/// observed index) of a tree model.
#[derive(Clone, Debug)]
pub struct TreeModelParams<'a> {
    pub tree: &'a LatentTree,
    pub edge_corr: Vec<f64>,
    pub node_sd: Vec<f64>,
}

impl<'a> TreeModelParams<'a> {
    pub fn new(tree: &'a LatentTree, edge_corr: Vec<f64>, node_sd: Vec<f64>) -> Result<Self, ModelError> {
        let params = TreeModelParams { tree, edge_corr, node_sd };
        params.validate()?;
        Ok(params)
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.edge_corr.len() != self.tree.num_edges() {
            return Err(ModelError::Length {
                what: "edge correlations",
                expected: self.tree.num_edges(),
                got: self.edge_corr.len(),
            });
        }
        if self.node_sd.len() != self.tree.num_observed() {
            return Err(ModelError::Length {
                what: "standard deviations",
                expected: self.tree.num_observed(),
                got: self.node_sd.len(),
            });
        }
        for (edge, &value) in self.edge_corr.iter().enumerate() {
            if !(value.abs() > 0.0 && value.abs() < 1.0) {
                return Err(ModelError::BadCorrelation { edge, value });
            }
        }
        for (node, &value) in self.node_sd.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::BadStdDev { node, value });
            }
        }
        Ok(())
    }
}

/// `Σ_pq = σ_p σ_q ∏ ρ'_e` over the path between `p` and `q`; `Σ_pp = σ_p²`.
pub fn covariance_from_tree(params: &TreeModelParams<'_>) -> Result<DMatrix<f64>, ModelError> {
    params.validate()?;
    let tree = params.tree;
    let m = tree.num_observed();
    let sd = &params.node_sd;
    let mut cov = DMatrix::zeros(m, m);
    for p in 0..m {
        cov[(p, p)] = sd[p] * sd[p];
        for q in p + 1..m {
            let rho: f64 = tree
                .observed_path_edge_ids(p, q)
                .expect("indices in range")
                .into_iter()
                .map(|e| params.edge_corr[e])
                .product();
            let v = sd[p] * sd[q] * rho;
            cov[(p, q)] = v;
            cov[(q, p)] = v;
        }
    }
    Ok(cov)
}

/// One-factor model `X_p = μ_p + β_p H + ε_p` with `H ~ N(0, 1)` and
/// `ε_p ~ N(0, noise_var[p])`.
#[derive(Clone, Debug, PartialEq)]
pub struct OneFactorParams {
    pub mu: Vec<f64>,
    pub beta: Vec<f64>,
    pub noise_var: Vec<f64>,
}

impl OneFactorParams {
    pub fn new(mu: Vec<f64>, beta: Vec<f64>, noise_var: Vec<f64>) -> Result<Self, ModelError> {
        let params = OneFactorParams { mu, beta, noise_var };
        params.validate()?;
        Ok(params)
    }

    pub fn m(&self) -> usize {
        self.beta.len()
    }

    fn validate(&self) -> Result<(), ModelError> {
        let m = self.beta.len();
        for (what, len) in [("means", self.mu.len()), ("noise variances", self.noise_var.len())] {
            if len != m {
                return Err(ModelError::Length { what, expected: m, got: len });
            }
        }
        for (index, &value) in self.noise_var.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::BadNoiseVariance { index, value });
            }
        }
        Ok(())
    }

    /// The same distribution as a star tree model: `ρ'_p = β_p / σ_p` and
    /// `σ_p = sqrt(β_p² + noise_p)`.
    ///
    /// `star` must have a single latent hub adjacent to every observed node.
    pub fn star_reparametrization<'a>(&self, star: &'a LatentTree) -> Result<TreeModelParams<'a>, ModelError> {
        self.validate()?;
        let m = self.m();
        if star.num_observed() != m || star.num_edges() != m || star.num_nodes() != m + 1 {
            return Err(ModelError::NotAStar);
        }
        let sd: Vec<f64> = self
            .beta
            .iter()
            .zip(&self.noise_var)
            .map(|(b, v)| (b * b + v).sqrt())
            .collect();
        let mut edge_corr = vec![0.0; m];
        for (e, (u, v)) in star.edges().enumerate() {
            let p = leaf_index(star, u, v).ok_or(ModelError::NotAStar)?;
            if self.beta[p] == 0.0 {
                return Err(ModelError::ZeroLoading(p));
            }
            edge_corr[e] = self.beta[p] / sd[p];
        }
        TreeModelParams::new(star, edge_corr, sd)
    }
}

fn leaf_index(star: &LatentTree, u: NodeId, v: NodeId) -> Option<usize> {
    match (star.observed_index(u), star.observed_index(v)) {
        (Some(p), None) | (None, Some(p)) => Some(p),
        _ => None,
    }
}

/// `Σ = β βᵀ + diag(noise_var)`.
pub fn covariance_from_factor(params: &OneFactorParams) -> Result<DMatrix<f64>, ModelError> {
    params.validate()?;
    let beta = DVector::from_column_slice(&params.beta);
    Ok(&beta * beta.transpose() + DMatrix::from_diagonal(&DVector::from_column_slice(&params.noise_var)))
}

/// `n × m` observations, one row per draw, with column names.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMatrix {
    data: DMatrix<f64>,
    names: Vec<String>,
}

impl SampleMatrix {
    pub fn new(data: DMatrix<f64>, names: Vec<String>) -> Result<Self, ModelError> {
        if names.len() != data.ncols() {
            return Err(ModelError::Length { what: "column names", expected: data.ncols(), got: names.len() });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            let (i, j) = (pos % data.nrows(), pos / data.nrows());
            return Err(ModelError::BadSample(format!("non-finite entry at row {}, column {}", i + 1, j + 1)));
        }
        Ok(SampleMatrix { data, names })
    }

    /// Columns named `X1..Xm`.
    pub fn unnamed(data: DMatrix<f64>) -> Result<Self, ModelError> {
        let names = (1..=data.ncols()).map(|p| format!("X{p}")).collect();
        Self::new(data, names)
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn m(&self) -> usize {
        self.data.ncols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn column(&self, p: usize) -> &[f64] {
        let n = self.n();
        &self.data.as_slice()[p * n..(p + 1) * n]
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self, ModelError> {
        if names.len() != self.m() {
            return Err(ModelError::Length { what: "column names", expected: self.m(), got: names.len() });
        }
        self.names = names;
        Ok(self)
    }

    /// Copy with every column's mean subtracted.
    pub fn centered(&self) -> SampleMatrix {
        let mut data = self.data.clone();
        if self.n() > 0 {
            for mut col in data.column_iter_mut() {
                let mean = col.mean();
                col.add_scalar_mut(-mean);
            }
        }
        SampleMatrix { data, names: self.names.clone() }
    }
}

/// Rejects covariances that are not symmetric or whose smallest eigenvalue is
/// below `1e-12` times the largest.
pub fn check_positive_definite(cov: &DMatrix<f64>) -> Result<(), ModelError> {
    if !cov.is_square() {
        return Err(ModelError::NotSymmetric);
    }
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    if (cov - cov.transpose()).amax() > 1e-12 * scale {
        return Err(ModelError::NotSymmetric);
    }
    if cov.nrows() == 0 {
        return Ok(());
    }
    let eig = SymmetricEigen::new(cov.clone());
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if min.is_nan() || max.is_nan() || max <= 0.0 || min <= 1e-12 * max {
        return Err(ModelError::NotPositiveDefinite { min_eigenvalue: min, max_eigenvalue: max });
    }
    Ok(())
}

/// Draws `n` mean-zero Gaussian rows with covariance `cov`.
///
/// Row `i` is `L z_i` where `L` is the lower Cholesky factor and `z_i` holds
/// `m` standard normals drawn in order from `ChaCha20Rng::seed_from_u64(seed)`
/// through `rand_distr::StandardNormal`.
pub fn sample(cov: &DMatrix<f64>, n: usize, seed: u64) -> Result<SampleMatrix, ModelError> {
    check_positive_definite(cov)?;
    let m = cov.nrows();
    let chol = cov.clone().cholesky().ok_or(ModelError::NotPositiveDefinite {
        min_eigenvalue: f64::NAN,
        max_eigenvalue: f64::NAN,
    })?;
    let l = chol.l();
    let mut rng = seed::rng(seed);
    let mut data = DMatrix::zeros(n, m);
    let mut z = DVector::zeros(m);
    for i in 0..n {
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        let x = &l * &z;
        for p in 0..m {
            data[(i, p)] = x[p];
        }
    }
    SampleMatrix::unnamed(data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Setup {
    /// Every loading and every noise variance equal to 1.
    One,
    /// `β_1 = β_2 = 10`, remaining loadings i.i.d. normal with mean 0 and
    /// variance 0.2 (standard deviation `sqrt(0.2)`), noise variances 1/3.
    Two,
}

pub fn setup_params(setup: Setup, m: usize, seed: u64) -> Result<OneFactorParams, ModelError> {
    if m < 4 {
        return Err(ModelError::TooFewVariables(m));
    }
    let mu = vec![0.0; m];
    match setup {
        Setup::One => OneFactorParams::new(mu, vec![1.0; m], vec![1.0; m]),
        Setup::Two => {
            let mut rng = seed::rng(seed);
            let normal = Normal::new(0.0, 0.2f64.sqrt()).expect("valid normal");
            let mut beta = vec![10.0, 10.0];
            beta.extend((2..m).map(|_| rng.sample(normal)));
            OneFactorParams::new(mu, beta, vec![1.0 / 3.0; m])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn star_with_equal_correlations() {
        let t = LatentTree::star(5).unwrap();
        let p = TreeModelParams::new(&t, vec![0.6; 5], vec![1.0; 5]).unwrap();
        let cov = covariance_from_tree(&p).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expected = if i == j { 1.0 } else { 0.36 };
                assert_relative_eq!(cov[(i, j)], expected, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn chain_product_rule() {
        let t = LatentTree::path_graph(&["1", "2", "3"]).unwrap();
        let p = TreeModelParams::new(&t, vec![0.5, -0.7], vec![1.0; 3]).unwrap();
        let c = covariance_from_tree(&p).unwrap();
        assert_relative_eq!(c[(0, 2)], -0.35, epsilon = 1e-15);
        assert_relative_eq!(c[(0, 1)] * c[(1, 2)] - c[(1, 1)] * c[(0, 2)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn bad_correlations_rejected() {
        let t = LatentTree::star(3).unwrap();
        for bad in [0.0, 1.0, -1.0, 1.5, f64::NAN] {
            let err = TreeModelParams::new(&t, vec![0.5, bad, 0.5], vec![1.0; 3]).unwrap_err();
            assert!(matches!(err, ModelError::BadCorrelation { edge: 1, .. }));
        }
    }

    #[test]
    fn factor_covariances() {
        let zero = OneFactorParams::new(vec![0.0; 3], vec![0.0; 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(covariance_from_factor(&zero).unwrap(), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0])));

        let one = setup_params(Setup::One, 20, 0).unwrap();
        let c = covariance_from_factor(&one).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                assert_eq!(c[(i, j)], if i == j { 2.0 } else { 1.0 });
            }
        }
        assert!(OneFactorParams::new(vec![0.0], vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn setup_two_structure() {
        let p = setup_params(Setup::Two, 20, 11).unwrap();
        assert_eq!(&p.beta[..2], &[10.0, 10.0]);
        assert!(p.noise_var.iter().all(|&v| v == 1.0 / 3.0));
        assert_eq!(p, setup_params(Setup::Two, 20, 11).unwrap());
        assert_ne!(p.beta, setup_params(Setup::Two, 20, 12).unwrap().beta);
        let c = covariance_from_factor(&p).unwrap();
        assert_relative_eq!(c[(0, 1)], 100.0);
        assert_relative_eq!(c[(0, 0)], 100.0 + 1.0 / 3.0);
        assert!(setup_params(Setup::One, 3, 0).is_err());
    }

    #[test]
    fn factor_matches_star_reparametrisation() {
        let mut rng = seed::rng(5);
        for _ in 0..20 {
            let m = rng.random_range(3..9);
            let beta: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
            let noise: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..3.0)).collect();
            let f = OneFactorParams::new(vec![0.0; m], beta, noise).unwrap();
            let star = LatentTree::star(m).unwrap();
            let tp = f.star_reparametrization(&star).unwrap();
            let a = covariance_from_factor(&f).unwrap();
            let b = covariance_from_tree(&tp).unwrap();
            assert!((a - b).amax() <= 1e-12);
        }
    }

    #[test]
    fn zero_loading_has_no_star_form() {
        let f = OneFactorParams::new(vec![0.0; 3], vec![1.0, 0.0, 1.0], vec![1.0; 3]).unwrap();
        let star = LatentTree::star(3).unwrap();
        assert_eq!(f.star_reparametrization(&star).unwrap_err(), ModelError::ZeroLoading(1));
    }

    #[test]
    fn sampling_edge_cases() {
        let id = DMatrix::<f64>::identity(3, 3);
        let empty = sample(&id, 0, 1).unwrap();
        assert_eq!((empty.n(), empty.m()), (0, 3));
        assert_eq!(sample(&id, 50, 9).unwrap(), sample(&id, 50, 9).unwrap());
        assert_ne!(sample(&id, 50, 9).unwrap(), sample(&id, 50, 10).unwrap());

        let singular = DMatrix::from_element(3, 3, 1.0);
        assert!(matches!(sample(&singular, 5, 0), Err(ModelError::NotPositiveDefinite { .. })));
        let mut asym = id.clone();
        asym[(0, 1)] = 0.5;
        assert_eq!(sample(&asym, 5, 0).unwrap_err(), ModelError::NotSymmetric);
    }

    #[test]
    fn identity_sample_covariance_close_to_identity() {
        let n = 100_000;
        let x = sample(&DMatrix::identity(4, 4), n, 2024).unwrap();
        let s = x.data().transpose() * x.data() / n as f64;
        let bound = 4.0 / (n as f64).sqrt();
        assert!((s - DMatrix::<f64>::identity(4, 4)).amax() <= bound);
    }

    #[test]
    fn sampler_moment_bound() {
        // |S - Σ| <= 5 max_diag sqrt(log m / n) entrywise at n = 1e4
        let f = setup_params(Setup::Two, 8, 3).unwrap();
        let cov = covariance_from_factor(&f).unwrap();
        let n = 10_000;
        let bound = 5.0 * cov.diagonal().max() * ((8f64).ln() / n as f64).sqrt();
        for seed in 0..5 {
            let x = sample(&cov, n, seed).unwrap();
            let s = x.data().transpose() * x.data() / n as f64;
            assert!((s - &cov).amax() <= bound, "seed {seed}");
        }
    }

    #[test]
    fn centering_removes_means() {
        let data = DMatrix::from_row_slice(3, 2, &[1.0, 10.0, 2.0, 20.0, 3.0, 60.0]);
        let c = SampleMatrix::unnamed(data).unwrap().centered();
        assert_relative_eq!(c.column(0).iter().sum::<f64>(), 0.0);
        assert_relative_eq!(c.column(1).iter().sum::<f64>(), 0.0, epsilon = 1e-12);
        assert_eq!(c.column(0), &[-1.0, 0.0, 1.0]);
    }
}
