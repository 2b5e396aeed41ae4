//! Latent trees whose observed nodes may sit anywhere, not only at the leaves.
//!
//! A [`LatentTree`] owns its node names, its edge list and the ordered list of
//! observed nodes. Observed nodes are addressed by their 0-based position in
//! that list ("observed index"); every downstream constraint, covariance
//! matrix and data column uses the same ordering.

mod constraints;
mod parse;

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use thiserror::Error;

pub use constraints::{
    enumerate_constraints, ConstraintRef, ConstraintSystem, Equality, Inequality,
};

/// Position of a node in [`LatentTree::node_names`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node id {0} out of range")]
    NodeOutOfRange(usize),
    #[error("observed index {index} out of range (tree has {observed} observed nodes)")]
    ObservedOutOfRange { index: usize, observed: usize },
    #[error("indices must be distinct, got {0:?}")]
    NotDistinct(Vec<usize>),
    #[error("restriction needs at least two observed nodes, got {0}")]
    SubsetTooSmall(usize),
    #[error("constraint enumeration needs at least 3 observed nodes, got {0}")]
    TooFewObserved(usize),
    #[error("{message}")]
    Invalid { message: String, line: Option<usize> },
}

impl TreeError {
    fn invalid(message: impl Into<String>, line: Option<usize>) -> Self {
        TreeError::Invalid { message: message.into(), line }
    }

    /// Line in the source tree file the error refers to, if known.
    pub fn line(&self) -> Option<usize> {
        match self {
            TreeError::Parse { line, .. } => Some(*line),
            TreeError::Invalid { line, .. } => *line,
            _ => None,
        }
    }
}

/// Classification of an observed triple by the shape of its restriction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TripleClass {
    /// The three paths meet at a node that is not one of the triple.
    Star,
    /// `middle` lies on the path between the other two.
    Chain { middle: usize },
}

/// A bipartition `{a.0, a.1} | {b.0, b.1}` of four observed indices.
///
/// Normalised so that each pair is increasing and `a.0 < b.0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pairing {
    pub a: (usize, usize),
    pub b: (usize, usize),
}

impl Pairing {
    pub fn new(a: (usize, usize), b: (usize, usize)) -> Self {
        let a = (a.0.min(a.1), a.0.max(a.1));
        let b = (b.0.min(b.1), b.0.max(b.1));
        if a.0 < b.0 {
            Pairing { a, b }
        } else {
            Pairing { a: b, b: a }
        }
    }

    /// The three pairings of a sorted quadruple, in the order
    /// `{p,q}|{r,s}`, `{p,r}|{q,s}`, `{p,s}|{q,r}`.
    pub fn all_of(quad: [usize; 4]) -> [Pairing; 3] {
        let [p, q, r, s] = quad;
        [
            Pairing::new((p, q), (r, s)),
            Pairing::new((p, r), (q, s)),
            Pairing::new((p, s), (q, r)),
        ]
    }

    pub fn sorted_indices(&self) -> [usize; 4] {
        let mut v = [self.a.0, self.a.1, self.b.0, self.b.1];
        v.sort_unstable();
        v
    }
}

impl fmt::Display for Pairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{{},{}}}|{{{},{}}}",
            self.a.0 + 1,
            self.a.1 + 1,
            self.b.0 + 1,
            self.b.1 + 1
        )
    }
}

/// Classification of an observed quadruple.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadClass {
    /// Exactly one pairing has edge-disjoint paths; that pairing is the split.
    Split(Pairing),
    /// All three pairings have edge-disjoint paths.
    Degenerate,
}

/// Edge sets of the paths between every pair of observed nodes, as bitsets.
#[derive(Clone, Debug)]
struct PathTable {
    m: usize,
    words: usize,
    bits: Vec<u64>,
}

impl PathTable {
    fn slot(&self, p: usize, q: usize) -> Option<&[u64]> {
        if p == q {
            return None;
        }
        let (p, q) = (p.min(q), p.max(q));
        // row-major upper triangle without the diagonal
        let idx = p * (2 * self.m - p - 1) / 2 + (q - p - 1);
        Some(&self.bits[idx * self.words..(idx + 1) * self.words])
    }

    fn disjoint(&self, p: usize, q: usize, r: usize, s: usize) -> bool {
        match (self.slot(p, q), self.slot(r, s)) {
            (Some(a), Some(b)) => a.iter().zip(b).all(|(x, y)| x & y == 0),
            _ => true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LatentTree {
    names: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<(usize, usize)>>,
    observed: Vec<usize>,
    observed_pos: Vec<Option<usize>>,
    paths: PathTable,
}

impl PartialEq for LatentTree {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.edges == other.edges && self.observed == other.observed
    }
}

pub(crate) struct Located<T> {
    pub value: T,
    pub line: Option<usize>,
}

impl LatentTree {
    /// Builds a tree from named edges and the ordered list of observed nodes.
    pub fn new<S: AsRef<str>>(edges: &[(S, S)], observed: &[S]) -> Result<Self, TreeError> {
        let edges = edges
            .iter()
            .map(|(a, b)| Located {
                value: (a.as_ref().to_string(), b.as_ref().to_string()),
                line: None,
            })
            .collect::<Vec<_>>();
        let observed = observed
            .iter()
            .map(|o| Located { value: o.as_ref().to_string(), line: None })
            .collect::<Vec<_>>();
        Self::build(edges, observed)
    }

    pub(crate) fn build(
        edges: Vec<Located<(String, String)>>,
        observed: Vec<Located<String>>,
    ) -> Result<Self, TreeError> {
        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut first_line: Vec<Option<usize>> = Vec::new();
        let mut intern = |name: &str, line: Option<usize>| -> usize {
            if let Some(&i) = index.get(name) {
                return i;
            }
            let i = names.len();
            names.push(name.to_string());
            index.insert(name.to_string(), i);
            first_line.push(line);
            i
        };

        let mut edge_list = Vec::with_capacity(edges.len());
        let mut seen_edges: HashMap<(usize, usize), Option<usize>> = HashMap::new();
        for Located { value: (a, b), line } in &edges {
            if a == b {
                return Err(TreeError::invalid(format!("self-loop on `{a}`"), *line));
            }
            let u = intern(a, *line);
            let v = intern(b, *line);
            let key = (u.min(v), u.max(v));
            if let Some(prev) = seen_edges.insert(key, *line) {
                let at = prev.map(|l| format!(" (first declared on line {l})")).unwrap_or_default();
                return Err(TreeError::invalid(format!("duplicate edge `{a}`-`{b}`{at}"), *line));
            }
            edge_list.push(key);
        }

        let mut observed_nodes = Vec::with_capacity(observed.len());
        let mut seen_observed = HashSet::new();
        for Located { value: name, line } in &observed {
            let i = intern(name, *line);
            if !seen_observed.insert(i) {
                return Err(TreeError::invalid(format!("duplicate OBS `{name}`"), *line));
            }
            observed_nodes.push(i);
        }

        let n_nodes = names.len();
        if n_nodes == 0 {
            return Err(TreeError::invalid("tree has no nodes", None));
        }
        if edge_list.len() + 1 != n_nodes {
            return Err(TreeError::invalid(
                format!(
                    "a tree on {n_nodes} nodes needs {} edges, found {}",
                    n_nodes - 1,
                    edge_list.len()
                ),
                None,
            ));
        }

        let mut adjacency = vec![Vec::new(); n_nodes];
        for (e, &(u, v)) in edge_list.iter().enumerate() {
            adjacency[u].push((v, e));
            adjacency[v].push((u, e));
        }

        // with |E| = |V| - 1, connected implies acyclic
        let mut seen = vec![false; n_nodes];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        if let Some(u) = seen.iter().position(|s| !s) {
            return Err(TreeError::invalid(
                format!("graph is not connected: `{}` is unreachable", names[u]),
                first_line[u],
            ));
        }

        let mut observed_pos = vec![None; n_nodes];
        for (p, &u) in observed_nodes.iter().enumerate() {
            observed_pos[u] = Some(p);
        }
        for u in 0..n_nodes {
            if observed_pos[u].is_none() && adjacency[u].len() <= 2 {
                return Err(TreeError::invalid(
                    format!(
                        "latent node `{}` has degree {}; unobserved nodes need degree at least 3",
                        names[u],
                        adjacency[u].len()
                    ),
                    first_line[u],
                ));
            }
        }

        let paths = build_path_table(&adjacency, &observed_nodes, edge_list.len());
        Ok(LatentTree {
            names,
            index,
            edges: edge_list,
            adjacency,
            observed: observed_nodes,
            observed_pos,
            paths,
        })
    }

    /// Star tree with latent hub `H` and observed leaves `X1..Xm`.
    pub fn star(m: usize) -> Result<Self, TreeError> {
        let leaves: Vec<String> = (1..=m).map(|p| format!("X{p}")).collect();
        let edges: Vec<(String, String)> =
            leaves.iter().map(|l| ("H".to_string(), l.clone())).collect();
        Self::new(&edges, &leaves)
    }

    /// Path graph whose nodes are all observed, in the given order.
    pub fn path_graph<S: AsRef<str>>(nodes: &[S]) -> Result<Self, TreeError> {
        let edges: Vec<(&str, &str)> =
            nodes.windows(2).map(|w| (w[0].as_ref(), w[1].as_ref())).collect();
        let observed: Vec<&str> = nodes.iter().map(|s| s.as_ref()).collect();
        Self::new(&edges, &observed)
    }

    pub fn num_nodes(&self) -> usize {
        self.names.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Number of observed nodes, `m`.
    pub fn num_observed(&self) -> usize {
        self.observed.len()
    }

    pub fn node_names(&self) -> &[String] {
        &self.names
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.names[id.0]
    }

    pub fn node_id(&self, name: &str) -> Result<NodeId, TreeError> {
        self.index
            .get(name)
            .map(|&i| NodeId(i))
            .ok_or_else(|| TreeError::UnknownNode(name.to_string()))
    }

    /// Edges as node-id pairs with the smaller id first; position is the edge id.
    pub fn edges(&self) -> impl ExactSizeIterator<Item = (NodeId, NodeId)> + '_ {
        self.edges.iter().map(|&(u, v)| (NodeId(u), NodeId(v)))
    }

    pub fn edge_id(&self, a: NodeId, b: NodeId) -> Option<usize> {
        self.adjacency
            .get(a.0)?
            .iter()
            .find(|&&(v, _)| v == b.0)
            .map(|&(_, e)| e)
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.adjacency[id.0].len()
    }

    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency[id.0].iter().map(|&(v, _)| NodeId(v))
    }

    /// Observed nodes in declaration order.
    pub fn observed(&self) -> impl ExactSizeIterator<Item = NodeId> + '_ {
        self.observed.iter().map(|&u| NodeId(u))
    }

    pub fn observed_node(&self, p: usize) -> Result<NodeId, TreeError> {
        self.observed
            .get(p)
            .map(|&u| NodeId(u))
            .ok_or(TreeError::ObservedOutOfRange { index: p, observed: self.observed.len() })
    }

    pub fn observed_names(&self) -> Vec<String> {
        self.observed.iter().map(|&u| self.names[u].clone()).collect()
    }

    /// Observed index of a node, if it is observed.
    pub fn observed_index(&self, id: NodeId) -> Option<usize> {
        self.observed_pos.get(id.0).copied().flatten()
    }

    /// Edges of the unique path from `a` to `b`, oriented from `a` towards `b`.
    pub fn path_edges(&self, a: NodeId, b: NodeId) -> Result<Vec<(NodeId, NodeId)>, TreeError> {
        let n = self.names.len();
        for id in [a, b] {
            if id.0 >= n {
                return Err(TreeError::NodeOutOfRange(id.0));
            }
        }
        let parent = self.bfs_parents(a.0);
        let mut path = Vec::new();
        let mut v = b.0;
        while v != a.0 {
            let (u, _) = parent[v].expect("tree is connected");
            path.push((NodeId(u), NodeId(v)));
            v = u;
        }
        path.reverse();
        Ok(path)
    }

    /// Same as [`path_edges`](Self::path_edges), looked up by node name.
    pub fn path_edges_by_name(&self, a: &str, b: &str) -> Result<Vec<(String, String)>, TreeError> {
        let path = self.path_edges(self.node_id(a)?, self.node_id(b)?)?;
        Ok(path
            .into_iter()
            .map(|(u, v)| (self.names[u.0].clone(), self.names[v.0].clone()))
            .collect())
    }

    /// Edge ids on the path between observed nodes `p` and `q`.
    pub fn observed_path_edge_ids(&self, p: usize, q: usize) -> Result<Vec<usize>, TreeError> {
        self.check_observed(&[p, q])?;
        let Some(bits) = self.paths.slot(p, q) else {
            return Ok(Vec::new());
        };
        Ok((0..self.edges.len()).filter(|e| bits[e / 64] >> (e % 64) & 1 == 1).collect())
    }

    /// Whether `ph(p, q)` and `ph(r, s)` share no edge.
    pub fn paths_disjoint(&self, p: usize, q: usize, r: usize, s: usize) -> bool {
        self.paths.disjoint(p, q, r, s)
    }

    fn bfs_parents(&self, root: usize) -> Vec<Option<(usize, usize)>> {
        bfs_parents(&self.adjacency, root)
    }

    fn check_observed(&self, idx: &[usize]) -> Result<(), TreeError> {
        let m = self.observed.len();
        if let Some(&bad) = idx.iter().find(|&&p| p >= m) {
            return Err(TreeError::ObservedOutOfRange { index: bad, observed: m });
        }
        Ok(())
    }

    fn check_distinct(&self, idx: &[usize]) -> Result<(), TreeError> {
        self.check_observed(idx)?;
        for i in 0..idx.len() {
            if idx[i + 1..].contains(&idx[i]) {
                return Err(TreeError::NotDistinct(idx.to_vec()));
            }
        }
        Ok(())
    }

    /// Minimal subtree spanning the given observed nodes, with unobserved
    /// degree-two nodes suppressed. The result observes exactly `subset`, in
    /// the given order.
    pub fn restrict(&self, subset: &[usize]) -> Result<LatentTree, TreeError> {
        if subset.len() < 2 {
            return Err(TreeError::SubsetTooSmall(subset.len()));
        }
        self.check_distinct(subset)?;
        let root = self.observed[subset[0]];
        let parent = self.bfs_parents(root);

        let n = self.names.len();
        let mut keep_edge = vec![false; self.edges.len()];
        let mut keep_node = vec![false; n];
        keep_node[root] = true;
        for &p in &subset[1..] {
            let mut v = self.observed[p];
            while v != root && !keep_node[v] {
                keep_node[v] = true;
                let (u, e) = parent[v].expect("tree is connected");
                keep_edge[e] = true;
                v = u;
            }
        }

        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (e, &(u, v)) in self.edges.iter().enumerate() {
            if keep_edge[e] {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        let labelled: Vec<bool> = {
            let mut l = vec![false; n];
            for &p in subset {
                l[self.observed[p]] = true;
            }
            l
        };
        for u in 0..n {
            if keep_node[u] && !labelled[u] && adj[u].len() == 2 {
                let (a, b) = (adj[u][0], adj[u][1]);
                for (x, y) in [(a, b), (b, a)] {
                    let slot = adj[x].iter_mut().find(|w| **w == u).expect("symmetric adjacency");
                    *slot = y;
                }
                adj[u].clear();
                keep_node[u] = false;
            }
        }

        let mut edges = Vec::new();
        for (u, nbrs) in adj.iter().enumerate() {
            for &v in nbrs {
                if u < v {
                    edges.push((self.names[u].as_str(), self.names[v].as_str()));
                }
            }
        }
        let observed: Vec<&str> =
            subset.iter().map(|&p| self.names[self.observed[p]].as_str()).collect();
        if edges.is_empty() {
            // a single observed node cannot occur here since |subset| >= 2
            unreachable!("restriction to two or more distinct nodes has an edge");
        }
        LatentTree::new(&edges, &observed)
    }

    pub fn classify_triple(&self, p: usize, q: usize, r: usize) -> Result<TripleClass, TreeError> {
        self.check_distinct(&[p, q, r])?;
        Ok(self.classify_triple_unchecked(p, q, r))
    }

    pub(crate) fn classify_triple_unchecked(&self, p: usize, q: usize, r: usize) -> TripleClass {
        for (a, mid, b) in [(q, p, r), (p, q, r), (p, r, q)] {
            if self.paths.disjoint(a, mid, mid, b) {
                return TripleClass::Chain { middle: mid };
            }
        }
        TripleClass::Star
    }

    pub fn classify_quadruple(
        &self,
        p: usize,
        q: usize,
        r: usize,
        s: usize,
    ) -> Result<QuadClass, TreeError> {
        self.check_distinct(&[p, q, r, s])?;
        let mut quad = [p, q, r, s];
        quad.sort_unstable();
        Ok(self.classify_sorted_quadruple(quad))
    }

    pub(crate) fn classify_sorted_quadruple(&self, quad: [usize; 4]) -> QuadClass {
        let pairings = Pairing::all_of(quad);
        let empty: Vec<Pairing> = pairings
            .into_iter()
            .filter(|pr| self.paths.disjoint(pr.a.0, pr.a.1, pr.b.0, pr.b.1))
            .collect();
        match empty.len() {
            1 => QuadClass::Split(empty[0]),
            3 => QuadClass::Degenerate,
            k => unreachable!("four nodes of a tree cannot have {k} disjoint path pairings"),
        }
    }

    /// Serialises the tree in the line-oriented tree-file format.
    pub fn to_tree_file(&self) -> String {
        let mut out = String::new();
        for &(u, v) in &self.edges {
            out.push_str(&format!("EDGE {} {}\n", self.names[u], self.names[v]));
        }
        for &u in &self.observed {
            out.push_str(&format!("OBS {}\n", self.names[u]));
        }
        out
    }

    /// Dimension of the model's covariance set: one correlation per edge plus
    /// one variance per observed node.
    pub fn model_dimension(&self) -> usize {
        self.edges.len() + self.observed.len()
    }

    /// `m(m+1)/2` minus [`model_dimension`](Self::model_dimension); the
    /// generic rank of the equality constraints' Jacobian.
    pub fn model_codimension(&self) -> usize {
        let m = self.observed.len();
        (m * (m + 1) / 2).saturating_sub(self.model_dimension())
    }
}

fn bfs_parents(adjacency: &[Vec<(usize, usize)>], root: usize) -> Vec<Option<(usize, usize)>> {
    let mut parent = vec![None; adjacency.len()];
    let mut seen = vec![false; adjacency.len()];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &(v, e) in &adjacency[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some((u, e));
                queue.push_back(v);
            }
        }
    }
    parent
}

fn build_path_table(adjacency: &[Vec<(usize, usize)>], observed: &[usize], n_edges: usize) -> PathTable {
    let m = observed.len();
    let words = n_edges.div_ceil(64).max(1);
    let pairs = m * m.saturating_sub(1) / 2;
    let mut bits = vec![0u64; pairs * words];
    let mut idx = 0;
    for p in 0..m {
        let root = observed[p];
        let parent = bfs_parents(adjacency, root);
        for &target in &observed[p + 1..] {
            let slot = &mut bits[idx * words..(idx + 1) * words];
            let mut v = target;
            while v != root {
                let (u, e) = parent[v].expect("tree is connected");
                slot[e / 64] |= 1 << (e % 64);
                v = u;
            }
            idx += 1;
        }
    }
    PathTable { m, words, bits }
}
