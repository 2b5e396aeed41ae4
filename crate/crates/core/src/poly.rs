//! Homogeneous polynomials in the entries of a covariance matrix.
//!
//! A term is a signed product of covariance entries `σ_ab`. The order of the
//! factors matters for estimation: factor `k` of every term is estimated from
//! sample row `i + k`, which is what makes the resulting per-row estimates
//! unbiased and `(degree - 1)`-dependent.

use std::fmt::{self, Write};

use nalgebra::DMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub factors: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    pub terms: Vec<Term>,
}

impl Polynomial {
    pub fn new(terms: Vec<Term>) -> Self {
        debug_assert!(
            terms.windows(2).all(|w| w[0].factors.len() == w[1].factors.len()),
            "covariance polynomials here are homogeneous"
        );
        Polynomial { terms }
    }

    /// `σ_f0 σ_f1 - σ_g0 σ_g1`.
    pub fn binomial(plus: [(usize, usize); 2], minus: [(usize, usize); 2]) -> Self {
        Polynomial::new(vec![
            Term { coef: 1.0, factors: plus.to_vec() },
            Term { coef: -1.0, factors: minus.to_vec() },
        ])
    }

    pub fn degree(&self) -> usize {
        self.terms.first().map_or(0, |t| t.factors.len())
    }

    /// Evaluates the polynomial at a covariance matrix.
    pub fn eval(&self, cov: &DMatrix<f64>) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coef * t.factors.iter().map(|&(a, b)| cov[(a, b)]).product::<f64>())
            .sum()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.terms
            .iter()
            .flat_map(|t| t.factors.iter().map(|&(a, b)| a.max(b)))
            .max()
    }

    /// Partial derivative with respect to the symmetric entry `σ_ab = σ_ba`.
    pub fn derivative(&self, cov: &DMatrix<f64>, a: usize, b: usize) -> f64 {
        let hit = |&(x, y): &(usize, usize)| (x == a && y == b) || (x == b && y == a);
        let mut total = 0.0;
        for t in &self.terms {
            for (k, f) in t.factors.iter().enumerate() {
                if hit(f) {
                    let rest: f64 = t
                        .factors
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != k)
                        .map(|(_, &(x, y))| cov[(x, y)])
                        .product();
                    total += t.coef * rest;
                }
            }
        }
        total
    }

    /// Text form with 1-based indices, e.g. `s13*s24 - s14*s23`. When `wide`
    /// is set, indices are separated (`s10_11`) so that `m >= 10` stays
    /// unambiguous.
    pub fn to_text(&self, wide: bool) -> String {
        let mut out = String::new();
        for (i, t) in self.terms.iter().enumerate() {
            let neg = t.coef < 0.0;
            match (i, neg) {
                (0, true) => out.push('-'),
                (0, false) => {}
                (_, true) => out.push_str(" - "),
                (_, false) => out.push_str(" + "),
            }
            let mag = t.coef.abs();
            if mag != 1.0 {
                let _ = write!(out, "{mag}*");
            }
            let factors: Vec<String> = t
                .factors
                .iter()
                .map(|&(a, b)| {
                    if wide {
                        format!("s{}_{}", a + 1, b + 1)
                    } else {
                        format!("s{}{}", a + 1, b + 1)
                    }
                })
                .collect();
            out.push_str(&factors.join("*"));
        }
        out
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wide = self.max_index().is_some_and(|i| i >= 9);
        f.write_str(&self.to_text(wide))
    }
}
