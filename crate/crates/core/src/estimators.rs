//! Per-sample unbiased estimates of constraint polynomials.
//!
//! A polynomial of degree `d` in covariance entries is estimated at row `i` by
//! replacing factor `k` of every term with `X_{a,i+k} X_{b,i+k}`. For centred
//! Gaussian rows the result is unbiased, and consecutive estimates share rows
//! only within a window of `d`, so the sequence is `(d - 1)`-dependent. For a
//! tetrad this is the consecutive-pair difference
//! `X_{p,i}X_{s,i}X_{q,i+1}X_{r,i+1} - X_{p,i}X_{r,i}X_{q,i+1}X_{s,i+1}`.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::SampleMatrix;
use crate::poly::{Polynomial, Term};
use crate::seed;
use crate::tree::{enumerate_constraints, ConstraintRef, ConstraintSystem, LatentTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("requested {requested} columns but only {available} constraints are available")]
    SubsampleTooLarge { requested: usize, available: usize },
    #[error("variable index {index} out of range for {m} variables")]
    IndexOutOfRange { index: usize, m: usize },
    #[error("indices must be distinct: {0:?}")]
    NotDistinct(Vec<usize>),
    #[error("constraints are over {expected} variables but the data has {got} columns")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no constraints selected")]
    NoColumns,
    #[error("estimate sequence has no rows")]
    Empty,
}

/// The tetrad `σ_ps σ_qr - σ_pr σ_qs` with `rows = (p, s)` and
/// `cols = (q, r)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TetradIndex {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

impl TetradIndex {
    pub fn new(p: usize, q: usize, r: usize, s: usize) -> Result<Self, EstimatorError> {
        let v = [p, q, r, s];
        for i in 0..4 {
            for j in i + 1..4 {
                if v[i] == v[j] {
                    return Err(EstimatorError::NotDistinct(v.to_vec()));
                }
            }
        }
        Ok(TetradIndex { rows: (p, s), cols: (q, r) })
    }

    /// `(p, q, r, s)`.
    pub fn pqrs(&self) -> [usize; 4] {
        [self.rows.0, self.cols.0, self.cols.1, self.rows.1]
    }

    /// Lexicographically smallest `(p, s, q, r)` among the rewritings that
    /// leave the tetrad (and its sign) unchanged.
    pub fn canonical(&self) -> Self {
        let (p, s) = self.rows;
        let (q, r) = self.cols;
        [(p, s, q, r), (s, p, r, q), (q, r, p, s), (r, q, s, p)]
            .into_iter()
            .min()
            .map(|(p, s, q, r)| TetradIndex { rows: (p, s), cols: (q, r) })
            .unwrap()
    }

    pub fn polynomial(&self) -> Polynomial {
        let [p, q, r, s] = self.pqrs();
        Polynomial::binomial([(p, s), (q, r)], [(p, r), (q, s)])
    }

    fn check(&self, m: usize) -> Result<(), EstimatorError> {
        match self.pqrs().into_iter().find(|&i| i >= m) {
            Some(index) => Err(EstimatorError::IndexOutOfRange { index, m }),
            None => Ok(()),
        }
    }
}

pub fn tetrad_value(cov: &DMatrix<f64>, idx: TetradIndex) -> Result<f64, EstimatorError> {
    idx.check(cov.nrows().min(cov.ncols()))?;
    Ok(idx.polynomial().eval(cov))
}

/// Length `n - 1` sequence of consecutive-pair tetrad differences.
pub fn tetrad_estimates(data: &SampleMatrix, idx: TetradIndex) -> Result<Vec<f64>, EstimatorError> {
    idx.check(data.m())?;
    if data.n() < 2 {
        return Err(EstimatorError::TooFewRows { needed: 2, got: data.n() });
    }
    let poly = idx.polynomial();
    let mut out = vec![0.0; data.n() - 1];
    fill_estimates(data, &poly, &mut out);
    Ok(out)
}

/// Length `n - 2` sequence `X_{p,i}X_{q,i} X_{p,i+1}X_{r,i+1} X_{q,i+2}X_{r,i+2}`,
/// unbiased for `σ_pq σ_pr σ_qr`.
pub fn monomial_estimates(data: &SampleMatrix, triple: (usize, usize, usize)) -> Result<Vec<f64>, EstimatorError> {
    let (p, q, r) = triple;
    let m = data.m();
    if let Some(index) = [p, q, r].into_iter().find(|&i| i >= m) {
        return Err(EstimatorError::IndexOutOfRange { index, m });
    }
    if data.n() < 3 {
        return Err(EstimatorError::TooFewRows { needed: 3, got: data.n() });
    }
    let poly = Polynomial::new(vec![Term { coef: 1.0, factors: vec![(p, q), (p, r), (q, r)] }]);
    let mut out = vec![0.0; data.n() - 2];
    fill_estimates(data, &poly, &mut out);
    Ok(out)
}

/// Estimates of an arbitrary homogeneous polynomial for `rows` consecutive
/// windows. Requires `rows + degree - 1 <= n`.
pub fn polynomial_estimates(data: &SampleMatrix, poly: &Polynomial, rows: usize) -> Result<Vec<f64>, EstimatorError> {
    if let Some(index) = poly.max_index().filter(|&i| i >= data.m()) {
        return Err(EstimatorError::IndexOutOfRange { index, m: data.m() });
    }
    let needed = rows + poly.degree().saturating_sub(1);
    if data.n() < needed {
        return Err(EstimatorError::TooFewRows { needed, got: data.n() });
    }
    let mut out = vec![0.0; rows];
    fill_estimates(data, poly, &mut out);
    Ok(out)
}

fn fill_estimates(data: &SampleMatrix, poly: &Polynomial, out: &mut [f64]) {
    out.fill(0.0);
    for term in &poly.terms {
        let cols: Vec<(&[f64], &[f64])> =
            term.factors.iter().map(|&(a, b)| (data.column(a), data.column(b))).collect();
        for (i, y) in out.iter_mut().enumerate() {
            let mut prod = term.coef;
            for (k, (xa, xb)) in cols.iter().enumerate() {
                prod *= xa[i + k] * xb[i + k];
            }
            *y += prod;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatisticMode {
    EqualitiesOnly,
    WithInequalities,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Column {
    /// `None` for sequences built directly from values.
    pub constraint: Option<ConstraintRef>,
    /// Inequality columns estimate a polynomial that is `<= 0` under the
    /// model and enter the statistic without absolute value.
    pub one_sided: bool,
}

/// Row `i` holds the estimates `(Y_{i,1}, ..., Y_{i,K})`.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateSequence {
    values: DMatrix<f64>,
    dependence_order: usize,
    columns: Vec<Column>,
}

impl EstimateSequence {
    pub fn new(values: DMatrix<f64>, dependence_order: usize, columns: Vec<Column>) -> Self {
        assert_eq!(values.ncols(), columns.len(), "one column descriptor per column");
        EstimateSequence { values, dependence_order, columns }
    }

    /// Two-sided columns without constraint labels.
    pub fn from_values(values: DMatrix<f64>, dependence_order: usize) -> Self {
        let columns = vec![Column { constraint: None, one_sided: false }; values.ncols()];
        Self::new(values, dependence_order, columns)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_columns(&self) -> usize {
        self.values.ncols()
    }

    pub fn dependence_order(&self) -> usize {
        self.dependence_order
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, k: usize) -> &[f64] {
        let rows = self.rows();
        &self.values.as_slice()[k * rows..(k + 1) * rows]
    }
}

/// All candidate columns in canonical order: equality polynomials, then (in
/// `WithInequalities` mode) inequalities.
fn candidate_columns(cs: &ConstraintSystem, mode: StatisticMode) -> usize {
    match mode {
        StatisticMode::EqualitiesOnly => cs.num_equality_columns(),
        StatisticMode::WithInequalities => cs.num_equality_columns() + cs.inequalities.len(),
    }
}

fn column_ref(cs: &ConstraintSystem, j: usize) -> ConstraintRef {
    let ne = cs.num_equality_columns();
    if j < ne {
        cs.equality_column(j).expect("column in range")
    } else {
        ConstraintRef::Inequality { index: j - ne }
    }
}

/// Estimates for every selected constraint polynomial.
///
/// Columns follow the canonical order with equalities first. With
/// `subsample = Some((k, seed))`, `k` column ids are drawn without replacement
/// and kept in canonical order. All columns share `n - d` rows where `d + 1`
/// is the largest polynomial degree among the selected columns.
pub fn build_estimate_matrix(
    data: &SampleMatrix,
    cs: &ConstraintSystem,
    mode: StatisticMode,
    subsample: Option<(usize, u64)>,
) -> Result<EstimateSequence, EstimatorError> {
    if data.m() != cs.num_observed() {
        return Err(EstimatorError::DimensionMismatch { expected: cs.num_observed(), got: data.m() });
    }
    let available = candidate_columns(cs, mode);
    let selected: Vec<usize> = match subsample {
        None => (0..available).collect(),
        Some((k, s)) => {
            if k > available {
                return Err(EstimatorError::SubsampleTooLarge { requested: k, available });
            }
            let mut ids = index::sample(&mut seed::rng(s), available, k).into_vec();
            ids.sort_unstable();
            ids
        }
    };
    if selected.is_empty() {
        return Err(EstimatorError::NoColumns);
    }
    let refs: Vec<ConstraintRef> = selected.iter().map(|&j| column_ref(cs, j)).collect();
    let polys: Vec<Polynomial> = refs.iter().map(|&c| cs.polynomial(c)).collect();
    let degree = polys.iter().map(Polynomial::degree).max().unwrap_or(2);
    if data.n() < degree {
        return Err(EstimatorError::TooFewRows { needed: degree, got: data.n() });
    }
    let rows = data.n() - (degree - 1);
    let mut values = DMatrix::zeros(rows, polys.len());
    values
        .as_mut_slice()
        .par_chunks_mut(rows)
        .zip(polys.par_iter())
        .for_each(|(col, poly)| fill_estimates(data, poly, col));
    let columns = refs
        .into_iter()
        .map(|c| Column { constraint: Some(c), one_sided: matches!(c, ConstraintRef::Inequality { .. }) })
        .collect();
    Ok(EstimateSequence::new(values, degree - 1, columns))
}

/// `Ȳ_k`, the mean of each column.
pub fn column_means(seq: &EstimateSequence) -> Result<DVector<f64>, EstimatorError> {
    if seq.rows() == 0 {
        return Err(EstimatorError::Empty);
    }
    let n = seq.rows() as f64;
    Ok(DVector::from_iterator(
        seq.num_columns(),
        (0..seq.num_columns()).map(|k| seq.column(k).iter().sum::<f64>() / n),
    ))
}

/// `S = n⁻¹ Σ X_i X_iᵀ` (no centring).
pub fn sample_covariance(data: &SampleMatrix) -> DMatrix<f64> {
    let x = data.data();
    let n = x.nrows().max(1) as f64;
    x.tr_mul(x) / n
}

/// Every equality polynomial of `cs` evaluated at the sample covariance.
pub fn plugin_values(data: &SampleMatrix, cs: &ConstraintSystem) -> Result<Vec<f64>, EstimatorError> {
    if data.m() != cs.num_observed() {
        return Err(EstimatorError::DimensionMismatch { expected: cs.num_observed(), got: data.m() });
    }
    let s = sample_covariance(data);
    Ok(cs.equality_columns().map(|c| cs.polynomial(c).eval(&s)).collect())
}

/// `τ(S)`: the `2·C(m,4)` tetrads of the star model at the sample covariance,
/// in canonical order.
pub fn plugin_tetrads(data: &SampleMatrix) -> Result<Vec<f64>, EstimatorError> {
    let m = data.m();
    if m < 4 {
        return Ok(Vec::new());
    }
    let star = LatentTree::star(m).expect("star with m >= 4 is valid");
    let cs = enumerate_constraints(&star).expect("m >= 4");
    plugin_values(data, &cs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{covariance_from_factor, sample, setup_params, Setup};
    use approx::assert_relative_eq;

    fn integer_data() -> SampleMatrix {
        SampleMatrix::unnamed(DMatrix::from_row_slice(
            4,
            4,
            &[1.0, 2.0, -1.0, 3.0, 2.0, 0.0, 1.0, -2.0, -1.0, 3.0, 2.0, 1.0, 4.0, 1.0, -3.0, 2.0],
        ))
        .unwrap()
    }

    #[test]
    fn tetrad_value_examples() {
        let setup1 = covariance_from_factor(&setup_params(Setup::One, 6, 0).unwrap()).unwrap();
        let idx = TetradIndex::new(0, 1, 2, 3).unwrap();
        assert_eq!(tetrad_value(&setup1, idx).unwrap(), 0.0);
        assert_eq!(tetrad_value(&DMatrix::identity(4, 4), idx).unwrap(), 0.0);

        // σ_ps = 2, σ_qr = 3, σ_pr = 1, σ_qs = 1 with (p,q,r,s) = (0,1,2,3)
        let mut c = DMatrix::identity(4, 4) * 10.0;
        for (a, b, v) in [(0, 3, 2.0), (1, 2, 3.0), (0, 2, 1.0), (1, 3, 1.0)] {
            c[(a, b)] = v;
            c[(b, a)] = v;
        }
        assert!(c.clone().cholesky().is_some());
        assert_eq!(tetrad_value(&c, idx).unwrap(), 5.0);
        assert!(tetrad_value(&c, TetradIndex::new(0, 1, 2, 7).unwrap()).is_err());
        assert!(TetradIndex::new(0, 1, 1, 2).is_err());
    }

    #[test]
    fn canonical_form_preserves_value() {
        let mut c = DMatrix::from_fn(5, 5, |i, j| 1.0 / (1.0 + (i as f64 - j as f64).abs()));
        c[(0, 4)] = 0.3;
        c[(4, 0)] = 0.3;
        for (p, q, r, s) in [(3, 1, 0, 2), (4, 2, 1, 0), (2, 0, 4, 3)] {
            let t = TetradIndex::new(p, q, r, s).unwrap();
            let can = t.canonical();
            assert_eq!(can, can.canonical());
            assert_relative_eq!(tetrad_value(&c, t).unwrap(), tetrad_value(&c, can).unwrap(), epsilon = 1e-15);
            assert!((can.rows, can.cols) <= (t.rows, t.cols));
        }
    }

    #[test]
    fn tetrad_estimates_by_hand() {
        let ones = SampleMatrix::unnamed(DMatrix::from_element(2, 4, 1.0)).unwrap();
        assert_eq!(tetrad_estimates(&ones, TetradIndex::new(0, 1, 2, 3).unwrap()).unwrap(), vec![0.0]);

        let x = integer_data();
        let d = x.data();
        let (p, q, r, s) = (0, 1, 2, 3);
        let got = tetrad_estimates(&x, TetradIndex::new(p, q, r, s).unwrap()).unwrap();
        assert_eq!(got.len(), 3);
        for i in 0..3 {
            let want = d[(i, p)] * d[(i, s)] * d[(i + 1, q)] * d[(i + 1, r)]
                - d[(i, p)] * d[(i, r)] * d[(i + 1, q)] * d[(i + 1, s)];
            assert_eq!(got[i], want);
        }
        // row 0: 1*3 * 0*1 - 1*(-1) * 0*(-2) = 0
        assert_eq!(got[0], 0.0);
        // row 1: 2*(-2) * 3*2 - 2*1 * 3*1 = -24 - 6
        assert_eq!(got[1], -30.0);

        let one_row = SampleMatrix::unnamed(DMatrix::from_element(1, 4, 1.0)).unwrap();
        assert!(matches!(
            tetrad_estimates(&one_row, TetradIndex::new(0, 1, 2, 3).unwrap()),
            Err(EstimatorError::TooFewRows { .. })
        ));
    }

    #[test]
    fn monomial_estimates_by_hand() {
        let ones = SampleMatrix::unnamed(DMatrix::from_element(5, 3, 1.0)).unwrap();
        assert_eq!(monomial_estimates(&ones, (0, 1, 2)).unwrap(), vec![1.0; 3]);

        let x = integer_data();
        let d = x.data();
        let got = monomial_estimates(&x, (0, 1, 3)).unwrap();
        assert_eq!(got.len(), 2);
        for i in 0..2 {
            let want = d[(i, 0)] * d[(i, 1)] * d[(i + 1, 0)] * d[(i + 1, 3)] * d[(i + 2, 1)] * d[(i + 2, 3)];
            assert_eq!(got[i], want);
        }
        // 1*2 * 2*(-2) * 3*1
        assert_eq!(got[0], -24.0);
        let short = SampleMatrix::unnamed(DMatrix::from_element(2, 3, 1.0)).unwrap();
        assert!(monomial_estimates(&short, (0, 1, 2)).is_err());
    }

    #[test]
    fn star_matrix_shapes_and_subsampling() {
        let cov = covariance_from_factor(&setup_params(Setup::One, 8, 0).unwrap()).unwrap();
        let x = sample(&cov, 30, 4).unwrap();
        let cs = enumerate_constraints(&LatentTree::star(8).unwrap()).unwrap();
        let eq = build_estimate_matrix(&x, &cs, StatisticMode::EqualitiesOnly, None).unwrap();
        assert_eq!((eq.rows(), eq.num_columns(), eq.dependence_order()), (29, 140, 1));
        assert!(eq.columns().iter().all(|c| !c.one_sided));

        let all = build_estimate_matrix(&x, &cs, StatisticMode::WithInequalities, None).unwrap();
        assert_eq!(all.num_columns(), 140 + cs.inequalities.len());
        assert_eq!(all.dependence_order(), 3);
        assert_eq!(all.rows(), 27);
        assert_eq!(all.column(0), &eq.column(0)[..27]);

        let sub = build_estimate_matrix(&x, &cs, StatisticMode::EqualitiesOnly, Some((20, 9))).unwrap();
        assert_eq!(sub.num_columns(), 20);
        assert_eq!(sub, build_estimate_matrix(&x, &cs, StatisticMode::EqualitiesOnly, Some((20, 9))).unwrap());
        let ids: Vec<ConstraintRef> = sub.columns().iter().map(|c| c.constraint.unwrap()).collect();
        for (k, c) in ids.iter().enumerate() {
            let j = (0..140).find(|&j| cs.equality_column(j) == Some(*c)).unwrap();
            assert_eq!(sub.column(k), eq.column(j));
        }
        assert_eq!(
            build_estimate_matrix(&x, &cs, StatisticMode::EqualitiesOnly, Some((141, 9))).unwrap_err(),
            EstimatorError::SubsampleTooLarge { requested: 141, available: 140 }
        );
    }

    #[test]
    fn star_of_four_gives_the_two_tetrads() {
        let x = integer_data();
        let cs = enumerate_constraints(&LatentTree::star(4).unwrap()).unwrap();
        let seq = build_estimate_matrix(&x, &cs, StatisticMode::EqualitiesOnly, None).unwrap();
        assert_eq!(seq.num_columns(), 2);
        // σ_14 σ_23 - σ_13 σ_24 and σ_12 σ_34 - σ_13 σ_24
        let a = tetrad_estimates(&x, TetradIndex::new(0, 1, 2, 3).unwrap()).unwrap();
        let b = tetrad_estimates(&x, TetradIndex::new(0, 3, 2, 1).unwrap()).unwrap();
        assert_eq!(seq.column(0), a.as_slice());
        assert_eq!(seq.column(1), b.as_slice());
    }

    #[test]
    fn inequality_columns_are_negated_monomials() {
        let x = integer_data();
        let cs = enumerate_constraints(&LatentTree::path_graph(&["1", "2", "3", "4"]).unwrap()).unwrap();
        let seq = build_estimate_matrix(&x, &cs, StatisticMode::WithInequalities, None).unwrap();
        let (k, idx) = seq
            .columns()
            .iter()
            .enumerate()
            .find_map(|(k, c)| match c.constraint {
                Some(ConstraintRef::Inequality { index }) if cs.inequalities[index].kind() == "TripleSign" => {
                    Some((k, index))
                }
                _ => None,
            })
            .unwrap();
        assert!(seq.columns()[k].one_sided);
        let t = cs.inequalities[idx].sorted_indices();
        let mono = monomial_estimates(&x, (t[0], t[1], t[2])).unwrap();
        let negated: Vec<f64> = mono.iter().take(seq.rows()).map(|v| -v).collect();
        assert_eq!(seq.column(k), negated.as_slice());
    }

    #[test]
    fn dimension_mismatch_and_short_data() {
        let x = integer_data();
        let cs = enumerate_constraints(&LatentTree::star(5).unwrap()).unwrap();
        assert!(matches!(
            build_estimate_matrix(&x, &cs, StatisticMode::EqualitiesOnly, None),
            Err(EstimatorError::DimensionMismatch { expected: 5, got: 4 })
        ));
        let one = SampleMatrix::unnamed(DMatrix::from_element(1, 5, 1.0)).unwrap();
        assert!(matches!(
            build_estimate_matrix(&one, &cs, StatisticMode::EqualitiesOnly, None),
            Err(EstimatorError::TooFewRows { .. })
        ));
    }

    #[test]
    fn means_agree_with_streaming_sum() {
        let cov = covariance_from_factor(&setup_params(Setup::Two, 6, 1).unwrap()).unwrap();
        let x = sample(&cov, 400, 8).unwrap();
        let cs = enumerate_constraints(&LatentTree::star(6).unwrap()).unwrap();
        let seq = build_estimate_matrix(&x, &cs, StatisticMode::EqualitiesOnly, None).unwrap();
        let means = column_means(&seq).unwrap();
        for k in 0..seq.num_columns() {
            // Welford running mean
            let mut mean = 0.0;
            for (i, v) in seq.column(k).iter().enumerate() {
                mean += (v - mean) / (i + 1) as f64;
            }
            assert_relative_eq!(means[k], mean, max_relative = 1e-13, epsilon = 1e-13 * seq.values().amax());
        }
        let single = EstimateSequence::from_values(DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 4.0]), 1);
        assert_eq!(column_means(&single).unwrap().as_slice(), &[1.0, -2.0, 4.0]);
        let empty = EstimateSequence::from_values(DMatrix::zeros(0, 3), 1);
        assert_eq!(column_means(&empty).unwrap_err(), EstimatorError::Empty);
    }

    #[test]
    fn plugin_tetrads_match_direct_evaluation() {
        let same = SampleMatrix::unnamed(DMatrix::from_fn(10, 6, |_, j| j as f64 + 1.0)).unwrap();
        assert!(plugin_tetrads(&same).unwrap().iter().all(|v| v.abs() < 1e-9));

        let x = sample(&DMatrix::identity(5, 5), 20, 3).unwrap();
        let s = sample_covariance(&x);
        let tau = plugin_tetrads(&x).unwrap();
        assert_eq!(tau.len(), 10);
        let cs = enumerate_constraints(&LatentTree::star(5).unwrap()).unwrap();
        for (j, c) in cs.equality_columns().enumerate() {
            assert_eq!(tau[j], cs.polynomial(c).eval(&s));
        }
    }
}
