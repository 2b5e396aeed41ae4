//! Tree parameter files.
//!
//! ```text
//! # edge correlations, one per edge
//! CORR H X1 0.8
//! # observed standard deviations, 1 when omitted
//! SD X1 2.0
//! ```

use std::collections::HashMap;

use anyhow::{anyhow, bail, Context, Result};
use treetest::model::TreeModelParams;
use treetest::LatentTree;

pub fn parse<'a>(text: &str, tree: &'a LatentTree) -> Result<TreeModelParams<'a>> {
    let mut corr: HashMap<usize, f64> = HashMap::new();
    let mut sd = vec![1.0; tree.num_observed()];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let value = |tok: &str| -> Result<f64> {
            tok.parse().with_context(|| format!("line {lineno}: `{tok}` is not a number"))
        };
        match toks.as_slice() {
            ["CORR", a, b, v] => {
                let (a, b) = (tree.node_id(a)?, tree.node_id(b)?);
                let e = tree
                    .edge_id(a, b)
                    .ok_or_else(|| anyhow!("line {lineno}: no edge between {} and {}", tree.node_name(a), tree.node_name(b)))?;
                if corr.insert(e, value(v)?).is_some() {
                    bail!("line {lineno}: duplicate correlation for this edge");
                }
            }
            ["SD", name, v] => {
                let id = tree.node_id(name)?;
                let p = tree
                    .observed_index(id)
                    .ok_or_else(|| anyhow!("line {lineno}: `{name}` is not observed"))?;
                sd[p] = value(v)?;
            }
            _ => bail!("line {lineno}: expected `CORR <a> <b> <value>` or `SD <node> <value>`"),
        }
    }
    let mut edge_corr = Vec::with_capacity(tree.num_edges());
    for (e, (u, v)) in tree.edges().enumerate() {
        let c = corr
            .get(&e)
            .ok_or_else(|| anyhow!("no correlation for edge {}-{}", tree.node_name(u), tree.node_name(v)))?;
        edge_corr.push(*c);
    }
    Ok(TreeModelParams::new(tree, edge_corr, sd)?)
}
