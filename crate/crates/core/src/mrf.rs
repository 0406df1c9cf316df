//! Pairwise MRF data model: potentials, assignments, pseudomarginals, the
//! MAP objective, local-polytope feasibility, and node-based rounding.
//!
//! Potentials are additive log-domain scores. An assignment `x` has score
//! `sum_u f_u(x_u) + sum_(u,v) f_uv(x_u, x_v)`; probabilities are never
//! materialized at graph scale. Edges are stored with canonical orientation
//! (lower node index first) and edge tables are row-major `k_u x k_v` in
//! that orientation.

use crate::error::{Error, Result};

/// A set of per-node vectors and per-edge tables over some scope (the whole
/// graph, or one tree's local nodes/edges). Edge tables are row-major
/// `k_u x k_v` in the canonical orientation of the owning scope.
///
/// The same container carries pseudomarginals, dual variables, and
/// log-domain parameters; only the producing operation's contract
/// distinguishes them.
#[derive(Clone, Debug, PartialEq)]
pub struct TableSet {
    pub node: Vec<Vec<f64>>,
    pub edge: Vec<Vec<f64>>,
}

/// Node and edge marginal tables on a graph or tree.
pub type Pseudomarginal = TableSet;

impl TableSet {
    /// A table set of the same shape with every entry zero.
    pub fn zeros_like(&self) -> TableSet {
        TableSet {
            node: self.node.iter().map(|t| vec![0.0; t.len()]).collect(),
            edge: self.edge.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.node.iter_mut().chain(self.edge.iter_mut()) {
            t.iter_mut().for_each(|x| *x = value);
        }
    }

    /// Entries in a fixed order: node tables first, then edge tables.
    pub fn entries(&self) -> impl Iterator<Item = f64> + '_ {
        self.node
            .iter()
            .chain(self.edge.iter())
            .flat_map(|t| t.iter().copied())
    }

    pub fn add_assign(&mut self, other: &TableSet) {
        for (a, b) in self
            .node
            .iter_mut()
            .chain(self.edge.iter_mut())
            .zip(other.node.iter().chain(other.edge.iter()))
        {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Squared Euclidean distance over all entries, summed in fixed order.
    pub fn sq_dist(&self, other: &TableSet) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.entries().zip(other.entries()) {
            let d = a - b;
            acc += d * d;
        }
        acc
    }

    pub fn max_abs_diff(&self, other: &TableSet) -> f64 {
        let mut m: f64 = 0.0;
        for (a, b) in self.entries().zip(other.entries()) {
            m = m.max((a - b).abs());
        }
        m
    }

    pub fn dot(&self, other: &TableSet) -> f64 {
        self.entries().zip(other.entries()).map(|(a, b)| a * b).sum()
    }

    pub fn num_entries(&self) -> usize {
        self.node.iter().chain(self.edge.iter()).map(Vec::len).sum()
    }
}

/// A pairwise MRF: per-node label counts, canonical edges, and log-domain
/// score tables.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseMRF {
    cardinalities: Vec<usize>,
    edges: Vec<(usize, usize)>,
    node_potentials: Vec<Vec<f64>>,
    edge_potentials: Vec<Vec<f64>>,
}

impl PairwiseMRF {
    /// Validates structure and shapes: cardinalities at least 2, canonical
    /// edges (`u < v`, no duplicates, no self-loops), table lengths `k_u`
    /// and `k_u * k_v`, and finite entries everywhere.
    pub fn new(
        cardinalities: Vec<usize>,
        edges: Vec<(usize, usize)>,
        node_potentials: Vec<Vec<f64>>,
        edge_potentials: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = cardinalities.len();
        for (u, &k) in cardinalities.iter().enumerate() {
            if k < 2 {
                return Err(Error::CardinalityTooSmall { node: u, card: k });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for &(u, v) in &edges {
            if u == v {
                return Err(Error::SelfLoop { node: u });
            }
            if u > v {
                return Err(Error::NonCanonicalEdge { u, v });
            }
            if v >= n {
                return Err(Error::NodeOutOfRange { node: v, num_nodes: n });
            }
            if !seen.insert((u, v)) {
                return Err(Error::DuplicateEdge { u, v });
            }
        }
        if node_potentials.len() != n {
            return Err(Error::NodeTableShape {
                what: "node potential list",
                node: n,
                expected: n,
                got: node_potentials.len(),
            });
        }
        for (u, t) in node_potentials.iter().enumerate() {
            if t.len() != cardinalities[u] {
                return Err(Error::NodeTableShape {
                    what: "node potential",
                    node: u,
                    expected: cardinalities[u],
                    got: t.len(),
                });
            }
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteNode {
                    what: "node potential",
                    node: u,
                });
            }
        }
        if edge_potentials.len() != edges.len() {
            return Err(Error::EdgeTableShape {
                what: "edge potential list",
                edge: edges.len(),
                expected: edges.len(),
                got: edge_potentials.len(),
            });
        }
        for (e, t) in edge_potentials.iter().enumerate() {
            let (u, v) = edges[e];
            let expected = cardinalities[u] * cardinalities[v];
            if t.len() != expected {
                return Err(Error::EdgeTableShape {
                    what: "edge potential",
                    edge: e,
                    expected,
                    got: t.len(),
                });
            }
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteEdge {
                    what: "edge potential",
                    edge: e,
                });
            }
        }
        Ok(PairwiseMRF {
            cardinalities,
            edges,
            node_potentials,
            edge_potentials,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn cardinality(&self, u: usize) -> usize {
        self.cardinalities[u]
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_potential(&self, u: usize) -> &[f64] {
        &self.node_potentials[u]
    }

    pub fn edge_potential(&self, e: usize) -> &[f64] {
        &self.edge_potentials[e]
    }

    /// The score of a single edge-table cell in canonical orientation.
    pub fn edge_potential_at(&self, e: usize, xu: usize, xv: usize) -> f64 {
        let (_, v) = self.edges[e];
        self.edge_potentials[e][xu * self.cardinalities[v] + xv]
    }

    /// A table set shaped like this model with all entries zero.
    pub fn zero_tables(&self) -> TableSet {
        TableSet {
            node: self.cardinalities.iter().map(|&k| vec![0.0; k]).collect(),
            edge: self
                .edges
                .iter()
                .map(|&(u, v)| vec![0.0; self.cardinalities[u] * self.cardinalities[v]])
                .collect(),
        }
    }

    /// The uniform pseudomarginal: node entries `1/k_u`, edge entries the
    /// outer product of the uniform node vectors.
    pub fn uniform_marginals(&self) -> Pseudomarginal {
        TableSet {
            node: self
                .cardinalities
                .iter()
                .map(|&k| vec![1.0 / k as f64; k])
                .collect(),
            edge: self
                .edges
                .iter()
                .map(|&(u, v)| {
                    let (ku, kv) = (self.cardinalities[u], self.cardinalities[v]);
                    vec![1.0 / (ku * kv) as f64; ku * kv]
                })
                .collect(),
        }
    }
}

/// A full labeling of the graph, one 0-based label per node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    labels: Vec<usize>,
}

impl Assignment {
    pub fn new(labels: Vec<usize>) -> Self {
        Assignment { labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn validate(&self, mrf: &PairwiseMRF) -> Result<()> {
        if self.labels.len() != mrf.num_nodes() {
            return Err(Error::AssignmentLength {
                expected: mrf.num_nodes(),
                got: self.labels.len(),
            });
        }
        for (u, &x) in self.labels.iter().enumerate() {
            if x >= mrf.cardinality(u) {
                return Err(Error::LabelOutOfRange {
                    node: u,
                    label: x,
                    card: mrf.cardinality(u),
                });
            }
        }
        Ok(())
    }
}

/// Score of an assignment: node scores in node order, then edge scores in
/// edge order. Summation order is fixed so repeated evaluations are
/// bit-identical.
pub fn eval_assignment(mrf: &PairwiseMRF, x: &Assignment) -> Result<f64> {
    x.validate(mrf)?;
    let labels = x.labels();
    let mut score = 0.0;
    for u in 0..mrf.num_nodes() {
        score += mrf.node_potential(u)[labels[u]];
    }
    for (e, &(u, v)) in mrf.edges().iter().enumerate() {
        score += mrf.edge_potential_at(e, labels[u], labels[v]);
    }
    Ok(score)
}

/// The cost form of a model: every potential negated. An involution.
pub fn to_cost(mrf: &PairwiseMRF) -> PairwiseMRF {
    PairwiseMRF {
        cardinalities: mrf.cardinalities.clone(),
        edges: mrf.edges.clone(),
        node_potentials: mrf
            .node_potentials
            .iter()
            .map(|t| t.iter().map(|x| -x).collect())
            .collect(),
        edge_potentials: mrf
            .edge_potentials
            .iter()
            .map(|t| t.iter().map(|x| -x).collect())
            .collect(),
    }
}

fn check_shape(mu: &Pseudomarginal, mrf: &PairwiseMRF) -> Result<()> {
    if mu.node.len() != mrf.num_nodes() {
        return Err(Error::NodeTableShape {
            what: "pseudomarginal node list",
            node: mrf.num_nodes(),
            expected: mrf.num_nodes(),
            got: mu.node.len(),
        });
    }
    for (u, t) in mu.node.iter().enumerate() {
        if t.len() != mrf.cardinality(u) {
            return Err(Error::NodeTableShape {
                what: "pseudomarginal node table",
                node: u,
                expected: mrf.cardinality(u),
                got: t.len(),
            });
        }
    }
    if mu.edge.len() != mrf.num_edges() {
        return Err(Error::EdgeTableShape {
            what: "pseudomarginal edge list",
            edge: mrf.num_edges(),
            expected: mrf.num_edges(),
            got: mu.edge.len(),
        });
    }
    for (e, t) in mu.edge.iter().enumerate() {
        let (u, v) = mrf.edges()[e];
        let expected = mrf.cardinality(u) * mrf.cardinality(v);
        if t.len() != expected {
            return Err(Error::EdgeTableShape {
                what: "pseudomarginal edge table",
                edge: e,
                expected,
                got: t.len(),
            });
        }
    }
    Ok(())
}

/// The relaxed objective `<mu, f>`: node terms in node order, then edge
/// terms in edge order.
pub fn lp_objective(mu: &Pseudomarginal, mrf: &PairwiseMRF) -> Result<f64> {
    check_shape(mu, mrf)?;
    let mut acc = 0.0;
    for (u, t) in mu.node.iter().enumerate() {
        for (x, &m) in t.iter().enumerate() {
            acc += m * mrf.node_potential(u)[x];
        }
    }
    for (e, t) in mu.edge.iter().enumerate() {
        for (i, &m) in t.iter().enumerate() {
            acc += m * mrf.edge_potential(e)[i];
        }
    }
    Ok(acc)
}

/// Worst violation of the local-polytope constraints over all entries:
/// negativity, node normalization, and both row/column marginalization
/// checks per edge. Zero exactly on feasible points.
pub fn polytope_violation(mu: &Pseudomarginal, mrf: &PairwiseMRF) -> Result<f64> {
    check_shape(mu, mrf)?;
    let endpoints: Vec<(usize, usize)> = mrf.edges().to_vec();
    Ok(local_violation(&mu.node, &mu.edge, &endpoints))
}

/// Local-polytope violation for tables over an arbitrary scope; `endpoints`
/// gives, per edge table, the indices of its row/column node tables.
pub(crate) fn local_violation(
    node: &[Vec<f64>],
    edge: &[Vec<f64>],
    endpoints: &[(usize, usize)],
) -> f64 {
    let mut worst: f64 = 0.0;
    for t in node {
        let mut sum = 0.0;
        for &x in t {
            worst = worst.max(-x);
            sum += x;
        }
        worst = worst.max((sum - 1.0).abs());
    }
    for (t, &(u, v)) in edge.iter().zip(endpoints) {
        let (ku, kv) = (node[u].len(), node[v].len());
        for &x in t {
            worst = worst.max(-x);
        }
        for xu in 0..ku {
            let row: f64 = t[xu * kv..(xu + 1) * kv].iter().sum();
            worst = worst.max((row - node[u][xu]).abs());
        }
        for xv in 0..kv {
            let mut col = 0.0;
            for xu in 0..ku {
                col += t[xu * kv + xv];
            }
            worst = worst.max((col - node[v][xv]).abs());
        }
    }
    worst
}

/// Per-node argmax decoding; ties break toward the lowest label index.
pub fn round_solution(mu: &Pseudomarginal) -> Assignment {
    let labels = mu
        .node
        .iter()
        .map(|t| {
            let mut best = 0;
            for (x, &m) in t.iter().enumerate() {
                if m > t[best] {
                    best = x;
                }
            }
            best
        })
        .collect();
    Assignment::new(labels)
}
