//! The polynomial equality and inequality constraints that characterise the
//! covariance matrices of a latent tree model.
//!
//! Constraints are kept as index tuples over observed indices; their
//! polynomials are produced on demand. Inequalities are always stated in the
//! "`<= 0`" orientation.

use std::fmt;

use super::{LatentTree, Pairing, QuadClass, TreeError, TripleClass};
use crate::poly::{Polynomial, Term};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Equality {
    /// `p - q - r` with `q` the middle point: `σ_pq σ_qr - σ_qq σ_pr = 0`.
    /// `ends` is increasing.
    Chain { ends: (usize, usize), middle: usize },
    /// `{p,q}|{r,s}`: `σ_pr σ_qs - σ_ps σ_qr = 0`.
    QuadSplit(Pairing),
    /// Sorted `p<q<r<s`; both tetrads `σ_ps σ_qr - σ_pr σ_qs` and
    /// `σ_pq σ_rs - σ_pr σ_qs` vanish.
    QuadDegenerate([usize; 4]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Inequality {
    /// `-σ_pq σ_pr σ_qr <= 0` for a sorted triple.
    TripleSign([usize; 3]),
    /// For a sorted triple outside the chain set and a pivot `v` in it, with
    /// `a < b` the other two: `σ_av² σ_vb² - σ_vv² σ_ab² <= 0`.
    TripleBound { triple: [usize; 3], pivot: usize },
    /// `{p,q}|{r,s}`: `σ_pr² σ_qs² - σ_pq² σ_rs² <= 0`.
    QuadIneq(Pairing),
}

impl Equality {
    pub fn kind(&self) -> &'static str {
        match self {
            Equality::Chain { .. } => "Chain",
            Equality::QuadSplit(_) => "QuadSplit",
            Equality::QuadDegenerate(_) => "QuadDegenerate",
        }
    }

    pub fn sorted_indices(&self) -> Vec<usize> {
        match *self {
            Equality::Chain { ends, middle } => {
                let mut v = vec![ends.0, middle, ends.1];
                v.sort_unstable();
                v
            }
            Equality::QuadSplit(pr) => pr.sorted_indices().to_vec(),
            Equality::QuadDegenerate(q) => q.to_vec(),
        }
    }

    /// Number of polynomials (estimate columns) this constraint contributes.
    pub fn num_parts(&self) -> usize {
        match self {
            Equality::QuadDegenerate(_) => 2,
            _ => 1,
        }
    }

    pub fn polynomial(&self, part: usize) -> Polynomial {
        match *self {
            Equality::Chain { ends: (p, r), middle: q } => {
                Polynomial::binomial([(p, q), (q, r)], [(q, q), (p, r)])
            }
            Equality::QuadSplit(Pairing { a: (p, q), b: (r, s) }) => {
                Polynomial::binomial([(p, r), (q, s)], [(p, s), (q, r)])
            }
            Equality::QuadDegenerate([p, q, r, s]) => match part {
                0 => Polynomial::binomial([(p, s), (q, r)], [(p, r), (q, s)]),
                1 => Polynomial::binomial([(p, q), (r, s)], [(p, r), (q, s)]),
                _ => panic!("QuadDegenerate has two parts, asked for {part}"),
            },
        }
    }
}

impl fmt::Display for Equality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Equality::Chain { ends, middle } => {
                write!(f, "{}-{}-{}", ends.0 + 1, middle + 1, ends.1 + 1)
            }
            Equality::QuadSplit(pr) => write!(f, "{pr}"),
            Equality::QuadDegenerate([p, q, r, s]) => {
                write!(f, "{{{},{},{},{}}}", p + 1, q + 1, r + 1, s + 1)
            }
        }
    }
}

impl Inequality {
    pub fn kind(&self) -> &'static str {
        match self {
            Inequality::TripleSign(_) => "TripleSign",
            Inequality::TripleBound { .. } => "TripleBound",
            Inequality::QuadIneq(_) => "QuadIneq",
        }
    }

    pub fn sorted_indices(&self) -> Vec<usize> {
        match *self {
            Inequality::TripleSign(t) => t.to_vec(),
            Inequality::TripleBound { triple, .. } => triple.to_vec(),
            Inequality::QuadIneq(pr) => pr.sorted_indices().to_vec(),
        }
    }

    /// The polynomial whose value must be `<= 0`.
    pub fn polynomial(&self) -> Polynomial {
        match *self {
            Inequality::TripleSign([p, q, r]) => {
                Polynomial::new(vec![Term { coef: -1.0, factors: vec![(p, q), (p, r), (q, r)] }])
            }
            Inequality::TripleBound { triple, pivot: v } => {
                let mut others = triple.iter().copied().filter(|&x| x != v);
                let (a, b) = (others.next().unwrap(), others.next().unwrap());
                Polynomial::new(vec![
                    Term { coef: 1.0, factors: vec![(a, v), (a, v), (v, b), (v, b)] },
                    Term { coef: -1.0, factors: vec![(v, v), (v, v), (a, b), (a, b)] },
                ])
            }
            Inequality::QuadIneq(Pairing { a: (p, q), b: (r, s) }) => Polynomial::new(vec![
                Term { coef: 1.0, factors: vec![(p, r), (p, r), (q, s), (q, s)] },
                Term { coef: -1.0, factors: vec![(p, q), (p, q), (r, s), (r, s)] },
            ]),
        }
    }
}

impl fmt::Display for Inequality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Inequality::TripleSign([p, q, r]) => write!(f, "{{{},{},{}}}", p + 1, q + 1, r + 1),
            Inequality::TripleBound { triple: [p, q, r], pivot } => {
                write!(f, "{{{},{},{}}};pivot={}", p + 1, q + 1, r + 1, pivot + 1)
            }
            Inequality::QuadIneq(pr) => write!(f, "{pr}"),
        }
    }
}

/// One estimable polynomial of a [`ConstraintSystem`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConstraintRef {
    Equality { index: usize, part: usize },
    Inequality { index: usize },
}

/// Equalities and inequalities of a tree, each in canonical order:
/// lexicographic over the sorted index tuple, ties broken by constraint tag
/// (and pivot for `TripleBound`).
#[derive(Clone, Debug)]
pub struct ConstraintSystem {
    m: usize,
    pub equalities: Vec<Equality>,
    pub inequalities: Vec<Inequality>,
    /// `column_offsets[i]` is the first equality column of `equalities[i]`.
    column_offsets: Vec<usize>,
    num_equality_columns: usize,
}

impl ConstraintSystem {
    pub fn new(m: usize, equalities: Vec<Equality>, inequalities: Vec<Inequality>) -> Self {
        let mut column_offsets = Vec::with_capacity(equalities.len());
        let mut next = 0;
        for e in &equalities {
            column_offsets.push(next);
            next += e.num_parts();
        }
        ConstraintSystem { m, equalities, inequalities, column_offsets, num_equality_columns: next }
    }

    pub fn num_observed(&self) -> usize {
        self.m
    }

    /// Number of equality polynomials; `QuadDegenerate` counts twice.
    pub fn num_equality_columns(&self) -> usize {
        self.num_equality_columns
    }

    /// Maps the `j`-th equality polynomial to its constraint and part.
    pub fn equality_column(&self, j: usize) -> Option<ConstraintRef> {
        if j >= self.num_equality_columns {
            return None;
        }
        let index = self.column_offsets.partition_point(|&off| off <= j) - 1;
        Some(ConstraintRef::Equality { index, part: j - self.column_offsets[index] })
    }

    pub fn equality_columns(&self) -> impl Iterator<Item = ConstraintRef> + '_ {
        self.equalities
            .iter()
            .enumerate()
            .flat_map(|(index, e)| (0..e.num_parts()).map(move |part| ConstraintRef::Equality { index, part }))
    }

    pub fn polynomial(&self, c: ConstraintRef) -> Polynomial {
        match c {
            ConstraintRef::Equality { index, part } => self.equalities[index].polynomial(part),
            ConstraintRef::Inequality { index } => self.inequalities[index].polynomial(),
        }
    }

    pub fn count_equalities(&self, kind: &str) -> usize {
        self.equalities.iter().filter(|e| e.kind() == kind).count()
    }

    pub fn count_inequalities(&self, kind: &str) -> usize {
        self.inequalities.iter().filter(|e| e.kind() == kind).count()
    }
}

/// Enumerates every equality and inequality constraint of the tree.
///
/// Trees with three observed nodes produce triple constraints only.
pub fn enumerate_constraints(tree: &LatentTree) -> Result<ConstraintSystem, TreeError> {
    let m = tree.num_observed();
    if m < 3 {
        return Err(TreeError::TooFewObserved(m));
    }
    let mut equalities = Vec::new();
    let mut inequalities = Vec::new();
    // depth-first over sorted tuples: a triple precedes all of its extensions,
    // which is exactly lexicographic order on the sorted index tuples
    for p in 0..m {
        for q in p + 1..m {
            for r in q + 1..m {
                inequalities.push(Inequality::TripleSign([p, q, r]));
                match tree.classify_triple_unchecked(p, q, r) {
                    TripleClass::Chain { middle } => {
                        let mut ends = [p, q, r].into_iter().filter(|&x| x != middle);
                        let ends = (ends.next().unwrap(), ends.next().unwrap());
                        equalities.push(Equality::Chain { ends, middle });
                    }
                    TripleClass::Star => {
                        for pivot in [p, q, r] {
                            inequalities.push(Inequality::TripleBound { triple: [p, q, r], pivot });
                        }
                    }
                }
                for s in r + 1..m {
                    match tree.classify_sorted_quadruple([p, q, r, s]) {
                        QuadClass::Split(pr) => {
                            equalities.push(Equality::QuadSplit(pr));
                            inequalities.push(Inequality::QuadIneq(pr));
                        }
                        QuadClass::Degenerate => equalities.push(Equality::QuadDegenerate([p, q, r, s])),
                    }
                }
            }
        }
    }
    Ok(ConstraintSystem::new(m, equalities, inequalities))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn star_counts() {
        for (m, expected) in [(4, 2), (8, 140), (20, 9690)] {
            let cs = enumerate_constraints(&LatentTree::star(m).unwrap()).unwrap();
            assert_eq!(cs.num_equality_columns(), expected);
            assert_eq!(cs.count_equalities("Chain"), 0);
            assert_eq!(cs.count_equalities("QuadSplit"), 0);
            assert_eq!(cs.count_equalities("QuadDegenerate"), binom(m, 4));
            assert_eq!(cs.count_inequalities("TripleSign"), binom(m, 3));
            assert_eq!(cs.count_inequalities("TripleBound"), 3 * binom(m, 3));
            assert_eq!(cs.count_inequalities("QuadIneq"), 0);
        }
    }

    #[test]
    fn observed_chain_of_three() {
        let t = LatentTree::path_graph(&["1", "2", "3"]).unwrap();
        let cs = enumerate_constraints(&t).unwrap();
        assert_eq!(cs.equalities, vec![Equality::Chain { ends: (0, 2), middle: 1 }]);
        assert_eq!(cs.inequalities, vec![Inequality::TripleSign([0, 1, 2])]);
        assert_eq!(cs.polynomial(ConstraintRef::Equality { index: 0, part: 0 }).to_string(), "s12*s23 - s22*s13");
    }

    #[test]
    fn too_small_tree_is_an_error() {
        let t = LatentTree::path_graph(&["a", "b"]).unwrap();
        assert_eq!(enumerate_constraints(&t).unwrap_err(), TreeError::TooFewObserved(2));
    }

    #[test]
    fn degenerate_tetrads_follow_canonical_form() {
        let cs = enumerate_constraints(&LatentTree::star(4).unwrap()).unwrap();
        let texts: Vec<String> = cs.equality_columns().map(|c| cs.polynomial(c).to_string()).collect();
        assert_eq!(texts, vec!["s14*s23 - s13*s24", "s12*s34 - s13*s24"]);
    }

    #[test]
    fn ordering_is_lexicographic_then_by_tag() {
        let t = LatentTree::new(
            &[("1", "a"), ("3", "a"), ("a", "b"), ("2", "b"), ("4", "b"), ("b", "5")],
            &["1", "2", "3", "4", "5"],
        )
        .unwrap();
        let cs = enumerate_constraints(&t).unwrap();
        let keys: Vec<Vec<usize>> = cs.equalities.iter().map(|e| e.sorted_indices()).collect();
        assert!(keys.windows(2).all(|w| w[0] <= w[1]));
        let ikeys: Vec<(Vec<usize>, &str)> =
            cs.inequalities.iter().map(|e| (e.sorted_indices(), e.kind())).collect();
        for w in ikeys.windows(2) {
            assert!(w[0].0 <= w[1].0);
            if w[0].0 == w[1].0 && w[0].1 != w[1].1 {
                assert_eq!((w[0].1, w[1].1), ("TripleSign", "TripleBound"));
            }
        }
    }

    #[test]
    fn equality_column_lookup_matches_iteration() {
        let t = LatentTree::new(
            &[("1", "a"), ("3", "a"), ("a", "5"), ("2", "5"), ("4", "5")],
            &["1", "2", "3", "4", "5"],
        )
        .unwrap();
        let cs = enumerate_constraints(&t).unwrap();
        let listed: Vec<ConstraintRef> = cs.equality_columns().collect();
        assert_eq!(listed.len(), cs.num_equality_columns());
        for (j, c) in listed.iter().enumerate() {
            assert_eq!(cs.equality_column(j), Some(*c));
        }
        assert_eq!(cs.equality_column(listed.len()), None);
    }
}
