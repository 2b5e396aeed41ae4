//! Tree-induced pseudo-metrics on the observed nodes.
//!
//! A pseudo-metric is induced by a tree when it equals path sums of
//! non-negative edge weights. That holds exactly when the four-point pattern
//! `δ_pq + δ_rs <= δ_pr + δ_qs = δ_ps + δ_qr` holds for every quadruple whose
//! paths `p-q` and `r-s` are edge-disjoint, and `δ_pq + δ_qr = δ_pr` holds for
//! every triple with `q` on the path from `p` to `r`.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::tree::{LatentTree, NodeId, Pairing, TripleClass};

/// Absolute tolerance on metric residuals.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("metric must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("metric is {got}x{got} but the tree has {expected} observed nodes")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("entry ({p},{q}) is {value}; pseudo-metrics are finite, non-negative, symmetric and zero on the diagonal")]
    InvalidEntry { p: usize, q: usize, value: f64 },
    #[error("triangle inequality fails: d{p}{r} exceeds d{p}{q} + d{q}{r} by {excess:e}")]
    Triangle { p: usize, q: usize, r: usize, excess: f64 },
    #[error("edge weights: expected {expected}, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("no weight for edge `{0}`-`{1}`")]
    MissingWeight(String, String),
    #[error("edge weight {0} is negative or not finite")]
    BadWeight(f64),
}

/// Symmetric, non-negative matrix with zero diagonal over observed indices.
///
/// The triangle inequality is not checked on construction; see
/// [`PseudoMetric::check_triangle`] and [`is_t_induced`].
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoMetric {
    values: DMatrix<f64>,
}

impl PseudoMetric {
    pub fn new(values: DMatrix<f64>) -> Result<Self, MetricError> {
        let (rows, cols) = values.shape();
        if rows != cols {
            return Err(MetricError::NotSquare { rows, cols });
        }
        for p in 0..rows {
            for q in 0..rows {
                let v = values[(p, q)];
                let bad = !v.is_finite()
                    || v < 0.0
                    || (p == q && v != 0.0)
                    || (v - values[(q, p)]).abs() > DEFAULT_TOLERANCE;
                if bad {
                    return Err(MetricError::InvalidEntry { p: p + 1, q: q + 1, value: v });
                }
            }
        }
        Ok(PseudoMetric { values })
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.values[(p, q)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// First violated triangle inequality beyond `tol`, if any.
    pub fn check_triangle(&self, tol: f64) -> Result<(), MetricError> {
        let m = self.dim();
        for p in 0..m {
            for r in p + 1..m {
                for q in 0..m {
                    if q == p || q == r {
                        continue;
                    }
                    let excess = self.get(p, r) - self.get(p, q) - self.get(q, r);
                    if excess > tol {
                        return Err(MetricError::Triangle { p: p + 1, q: q + 1, r: r + 1, excess });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Non-negative weight per tree edge, indexed by edge id.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWeights(Vec<f64>);

impl EdgeWeights {
    pub fn new(tree: &LatentTree, weights: Vec<f64>) -> Result<Self, MetricError> {
        if weights.len() != tree.num_edges() {
            return Err(MetricError::WeightCount { expected: tree.num_edges(), got: weights.len() });
        }
        if let Some(&w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(MetricError::BadWeight(w));
        }
        Ok(EdgeWeights(weights))
    }

    /// Weights keyed by unordered pairs of node names.
    pub fn from_named(tree: &LatentTree, named: &HashMap<(String, String), f64>) -> Result<Self, MetricError> {
        let mut weights = Vec::with_capacity(tree.num_edges());
        for (u, v) in tree.edges() {
            let (a, b) = (tree.node_name(u).to_string(), tree.node_name(v).to_string());
            let w = named
                .get(&(a.clone(), b.clone()))
                .or_else(|| named.get(&(b.clone(), a.clone())))
                .ok_or(MetricError::MissingWeight(a, b))?;
            weights.push(*w);
        }
        Self::new(tree, weights)
    }

    pub fn uniform(tree: &LatentTree, w: f64) -> Result<Self, MetricError> {
        Self::new(tree, vec![w; tree.num_edges()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `δ_pq` = sum of edge weights on the path between observed `p` and `q`.
pub fn induced_metric(tree: &LatentTree, weights: &EdgeWeights) -> PseudoMetric {
    let m = tree.num_observed();
    let mut values = DMatrix::zeros(m, m);
    for p in 0..m {
        for q in p + 1..m {
            let d: f64 = tree
                .observed_path_edge_ids(p, q)
                .expect("indices in range")
                .into_iter()
                .map(|e| weights.0[e])
                .sum();
            values[(p, q)] = d;
            values[(q, p)] = d;
        }
    }
    PseudoMetric { values }
}

/// `δ_pq = -log |ρ_pq|` for the correlations of a covariance matrix.
///
/// Zero correlations give an infinite entry and are rejected.
pub fn correlation_metric(cov: &DMatrix<f64>) -> Result<PseudoMetric, MetricError> {
    if !cov.is_square() {
        return Err(MetricError::NotSquare { rows: cov.nrows(), cols: cov.ncols() });
    }
    let m = cov.nrows();
    let values = DMatrix::from_fn(m, m, |p, q| {
        if p == q {
            0.0
        } else {
            -(cov[(p, q)] / (cov[(p, p)] * cov[(q, q)]).sqrt()).abs().ln()
        }
    });
    PseudoMetric::new(values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    /// `δ_pq + δ_rs > δ_pr + δ_qs` for a disjoint pairing `{p,q}|{r,s}`.
    FourPointInequality,
    /// `δ_pr + δ_qs != δ_ps + δ_qr` for a disjoint pairing `{p,q}|{r,s}`.
    FourPointEquality,
    /// `δ_pq + δ_qr != δ_pr` for a chain `p - q - r`.
    ThreePoint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// `[p, q, r, s]` of the disjoint pairing, or `[p, q, r]` with `q` the middle.
    pub indices: Vec<usize>,
    pub residual: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let idx: Vec<String> = self.indices.iter().map(|i| (i + 1).to_string()).collect();
        write!(f, "{:?} at ({}): residual {:e}", self.kind, idx.join(","), self.residual)
    }
}

fn check_dim(delta: &PseudoMetric, tree: &LatentTree) -> Result<(), MetricError> {
    if delta.dim() != tree.num_observed() {
        return Err(MetricError::DimensionMismatch { got: delta.dim(), expected: tree.num_observed() });
    }
    Ok(())
}

/// Four-point checks over every quadruple and every edge-disjoint pairing.
pub fn check_four_point(delta: &PseudoMetric, tree: &LatentTree, tol: f64) -> Result<Vec<Violation>, MetricError> {
    check_dim(delta, tree)?;
    let m = tree.num_observed();
    let d = |a: usize, b: usize| delta.get(a, b);
    let mut out = Vec::new();
    for p in 0..m {
        for q in p + 1..m {
            for r in q + 1..m {
                for s in r + 1..m {
                    for Pairing { a: (w, x), b: (y, z) } in Pairing::all_of([p, q, r, s]) {
                        if !tree.paths_disjoint(w, x, y, z) {
                            continue;
                        }
                        let inner = d(w, x) + d(y, z);
                        let cross1 = d(w, y) + d(x, z);
                        let cross2 = d(w, z) + d(x, y);
                        if inner - cross1 > tol {
                            out.push(Violation {
                                kind: ViolationKind::FourPointInequality,
                                indices: vec![w, x, y, z],
                                residual: inner - cross1,
                            });
                        }
                        if (cross1 - cross2).abs() > tol {
                            out.push(Violation {
                                kind: ViolationKind::FourPointEquality,
                                indices: vec![w, x, y, z],
                                residual: cross1 - cross2,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Additivity along every observed chain `p - q - r`.
pub fn check_three_point(delta: &PseudoMetric, tree: &LatentTree, tol: f64) -> Result<Vec<Violation>, MetricError> {
    check_dim(delta, tree)?;
    let m = tree.num_observed();
    let mut out = Vec::new();
    for p in 0..m {
        for q in p + 1..m {
            for r in q + 1..m {
                if let TripleClass::Chain { middle } = tree.classify_triple(p, q, r).expect("distinct") {
                    let mut ends = [p, q, r].into_iter().filter(|&x| x != middle);
                    let (a, b) = (ends.next().unwrap(), ends.next().unwrap());
                    let residual = delta.get(a, middle) + delta.get(middle, b) - delta.get(a, b);
                    if residual.abs() > tol {
                        out.push(Violation { kind: ViolationKind::ThreePoint, indices: vec![a, middle, b], residual });
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InducedReport {
    pub induced: bool,
    pub violations: Vec<Violation>,
}

/// Decides whether a matrix is a pseudo-metric induced by `tree`.
///
/// Inputs that are not pseudo-metrics at all (including triangle-inequality
/// failures) are reported as errors rather than as violations.
pub fn is_t_induced(values: &DMatrix<f64>, tree: &LatentTree, tol: f64) -> Result<InducedReport, MetricError> {
    let delta = PseudoMetric::new(values.clone())?;
    check_dim(&delta, tree)?;
    delta.check_triangle(tol)?;
    let mut violations = check_four_point(&delta, tree, tol)?;
    violations.extend(check_three_point(&delta, tree, tol)?);
    Ok(InducedReport { induced: violations.is_empty(), violations })
}

/// A bipartition `A|B` of the observed indices; `a` holds the smallest index.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct XSplit {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

impl XSplit {
    pub fn new(mut a: Vec<usize>, mut b: Vec<usize>) -> Self {
        a.sort_unstable();
        b.sort_unstable();
        if b.first() < a.first() {
            std::mem::swap(&mut a, &mut b);
        }
        XSplit { a, b }
    }
}

impl fmt::Display for XSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: &[usize]| v.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(",");
        write!(f, "{{{}}}|{{{}}}", show(&self.a), show(&self.b))
    }
}

/// The splits of the observed set obtained by deleting each edge.
pub fn enumerate_splits(tree: &LatentTree) -> BTreeSet<XSplit> {
    let mut out = BTreeSet::new();
    for (u, v) in tree.edges() {
        let side = component_without_edge(tree, u, v);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for p in 0..tree.num_observed() {
            let node = tree.observed_node(p).expect("in range");
            if side[node.0] {
                a.push(p);
            } else {
                b.push(p);
            }
        }
        if !a.is_empty() && !b.is_empty() {
            out.insert(XSplit::new(a, b));
        }
    }
    out
}

/// Nodes reachable from `u` without crossing the edge `u-v`.
fn component_without_edge(tree: &LatentTree, u: NodeId, v: NodeId) -> Vec<bool> {
    let mut seen = vec![false; tree.num_nodes()];
    seen[u.0] = true;
    let mut queue = VecDeque::from([u]);
    while let Some(x) = queue.pop_front() {
        for y in tree.neighbors(x) {
            if (x == u && y == v) || seen[y.0] {
                continue;
            }
            seen[y.0] = true;
            queue.push_back(y);
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain3() -> LatentTree {
        LatentTree::path_graph(&["1", "2", "3"]).unwrap()
    }

    #[test]
    fn log_correlations_of_a_tree_model_are_induced() {
        use crate::model::{covariance_from_tree, TreeModelParams};
        let t = LatentTree::star(5).unwrap();
        let p = TreeModelParams::new(&t, vec![0.9, -0.5, 0.7, 0.3, 0.6], vec![1.0, 2.0, 0.5, 1.0, 3.0]).unwrap();
        let cov = covariance_from_tree(&p).unwrap();
        let d = correlation_metric(&cov).unwrap();
        assert!((d.get(0, 1) - (-(0.9f64.ln()) - 0.5f64.ln())).abs() < 1e-12);
        assert!(is_t_induced(d.as_matrix(), &t, DEFAULT_TOLERANCE).unwrap().induced);

        let diag = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(correlation_metric(&diag), Err(MetricError::InvalidEntry { .. })));
    }

    #[test]
    fn unit_star_metric() {
        let t = LatentTree::star(3).unwrap();
        let d = induced_metric(&t, &EdgeWeights::uniform(&t, 1.0).unwrap());
        for p in 0..3 {
            for q in 0..3 {
                assert_eq!(d.get(p, q), if p == q { 0.0 } else { 2.0 });
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_metric() {
        let t = LatentTree::star(5).unwrap();
        let d = induced_metric(&t, &EdgeWeights::uniform(&t, 0.0).unwrap());
        assert_eq!(d.as_matrix(), &DMatrix::zeros(5, 5));
        assert!(is_t_induced(d.as_matrix(), &t, DEFAULT_TOLERANCE).unwrap().induced);
    }

    #[test]
    fn chain_is_additive() {
        let t = chain3();
        let mut named = HashMap::new();
        named.insert(("1".to_string(), "2".to_string()), 0.7);
        named.insert(("3".to_string(), "2".to_string()), 1.9);
        let d = induced_metric(&t, &EdgeWeights::from_named(&t, &named).unwrap());
        assert_eq!(d.get(0, 2), 0.7 + 1.9);
        assert_eq!(d.get(0, 2), d.get(0, 1) + d.get(1, 2));
    }

    #[test]
    fn missing_weight_is_reported() {
        let t = chain3();
        let named = HashMap::from([(("1".to_string(), "2".to_string()), 0.7)]);
        assert!(matches!(EdgeWeights::from_named(&t, &named), Err(MetricError::MissingWeight(..))));
    }

    #[test]
    fn inflated_star_entry_breaks_four_point() {
        // unit star on four leaves: every off-diagonal entry is 2. Raising d12
        // to 3 makes d12 + d34 = 5 exceed d13 + d24 = 4 for the pairing
        // {1,2}|{3,4} and unbalances the equalities of the other two pairings.
        let t = LatentTree::star(4).unwrap();
        let mut d = induced_metric(&t, &EdgeWeights::uniform(&t, 1.0).unwrap()).as_matrix().clone();
        d[(0, 1)] += 1.0;
        d[(1, 0)] += 1.0;
        let delta = PseudoMetric::new(d.clone()).unwrap();
        let v = check_four_point(&delta, &t, DEFAULT_TOLERANCE).unwrap();
        assert!(v.iter().any(|v| v.kind == ViolationKind::FourPointInequality
            && v.indices == vec![0, 1, 2, 3]
            && (v.residual - 1.0).abs() < 1e-12));
        assert!(v.iter().any(|v| v.kind == ViolationKind::FourPointEquality));
        assert!(!is_t_induced(&d, &t, DEFAULT_TOLERANCE).unwrap().induced);
    }

    #[test]
    fn four_point_dimension_mismatch() {
        let t = LatentTree::star(4).unwrap();
        let d = PseudoMetric::new(DMatrix::zeros(3, 3)).unwrap();
        assert!(matches!(check_four_point(&d, &t, 1e-9), Err(MetricError::DimensionMismatch { .. })));
        let z = PseudoMetric::new(DMatrix::zeros(4, 4)).unwrap();
        assert!(check_four_point(&z, &t, 1e-9).unwrap().is_empty());
    }

    #[test]
    fn three_point_checks() {
        let t = chain3();
        let w = EdgeWeights::new(&t, vec![0.3, 0.8]).unwrap();
        let d = induced_metric(&t, &w);
        assert!(check_three_point(&d, &t, DEFAULT_TOLERANCE).unwrap().is_empty());
        let mut bumped = d.as_matrix().clone();
        bumped[(0, 2)] += 0.5;
        bumped[(2, 0)] += 0.5;
        let bumped = PseudoMetric::new(bumped).unwrap();
        let v = check_three_point(&bumped, &t, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].indices, vec![0, 1, 2]);

        let star = LatentTree::star(3).unwrap();
        let any = PseudoMetric::new(DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 5.0 })).unwrap();
        assert!(check_three_point(&any, &star, DEFAULT_TOLERANCE).unwrap().is_empty());
    }

    #[test]
    fn non_metric_input_is_an_error() {
        let t = LatentTree::star(3).unwrap();
        let mut d = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
        d[(0, 1)] = 5.0;
        d[(1, 0)] = 5.0;
        assert!(matches!(is_t_induced(&d, &t, 1e-9), Err(MetricError::Triangle { .. })));
        d[(1, 0)] = 4.0;
        assert!(matches!(is_t_induced(&d, &t, 1e-9), Err(MetricError::InvalidEntry { .. })));
    }

    #[test]
    fn splits_of_small_trees() {
        let star: Vec<String> = enumerate_splits(&LatentTree::star(3).unwrap()).iter().map(|s| s.to_string()).collect();
        assert_eq!(star, vec!["{1}|{2,3}", "{1,2}|{3}", "{1,3}|{2}"]);
        let chain: Vec<String> = enumerate_splits(&chain3()).iter().map(|s| s.to_string()).collect();
        assert_eq!(chain, vec!["{1}|{2,3}", "{1,2}|{3}"]);
    }

    #[test]
    fn caterpillar_central_edge_split() {
        let t = LatentTree::new(
            &[("1", "a"), ("3", "a"), ("a", "b"), ("2", "b"), ("4", "b")],
            &["1", "2", "3", "4"],
        )
        .unwrap();
        let splits = enumerate_splits(&t);
        assert_eq!(splits.len(), 5);
        assert!(splits.contains(&XSplit::new(vec![0, 2], vec![1, 3])));
    }
}
