//! Tree covers of the graph: construction, validation, consensus
//! bookkeeping, and splitting of cost potentials across trees.
//!
//! A cover is a collection of tree subgraphs such that every node and edge
//! of the graph appears in at least one tree. Shared components are
//! reconciled by the solver's consensus averaging, driven by the membership
//! lists kept here.

use crate::error::{Error, Result};
use crate::mrf::{PairwiseMRF, TableSet};

/// One tree of a cover: global node/edge ids, local cost tables, and a
/// positive weight. Local tables keep the global canonical orientation, so
/// consensus averaging never transposes.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeSubgraph {
    tree_id: usize,
    /// Global node ids, ascending. The position of an id is its local index.
    nodes: Vec<usize>,
    /// Global edge ids, ascending.
    edges: Vec<usize>,
    /// Per local edge, the local indices of its canonical (u, v) endpoints.
    local_endpoints: Vec<(usize, usize)>,
    /// Per local node, its label count (copied from the model).
    cards: Vec<usize>,
    /// Local cost tables; zero until `split_potentials` fills them.
    pub theta: TableSet,
    rho: f64,
}

impl TreeSubgraph {
    /// Builds a tree over the given global nodes/edges of `mrf`, checking
    /// connectivity and acyclicity. Node and edge id lists are sorted.
    pub fn new(
        tree_id: usize,
        mut nodes: Vec<usize>,
        mut edges: Vec<usize>,
        mrf: &PairwiseMRF,
        rho: f64,
    ) -> Result<Self> {
        if rho <= 0.0 || !rho.is_finite() {
            return Err(Error::NonPositiveRho { rho });
        }
        nodes.sort_unstable();
        nodes.dedup();
        edges.sort_unstable();
        edges.dedup();
        if nodes.is_empty() {
            return Err(Error::NotATree {
                tree: tree_id,
                reason: "empty node set".into(),
            });
        }
        if edges.len() + 1 != nodes.len() {
            return Err(Error::NotATree {
                tree: tree_id,
                reason: format!("{} nodes but {} edges", nodes.len(), edges.len()),
            });
        }
        let local_index = |g: usize| nodes.binary_search(&g).ok();
        let mut local_endpoints = Vec::with_capacity(edges.len());
        let mut adj = vec![Vec::new(); nodes.len()];
        for &e in edges.iter() {
            if e >= mrf.num_edges() {
                return Err(Error::NotATree {
                    tree: tree_id,
                    reason: format!("edge id {e} out of range"),
                });
            }
            let (gu, gv) = mrf.edges()[e];
            let (lu, lv) = match (local_index(gu), local_index(gv)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::NotATree {
                        tree: tree_id,
                        reason: format!("edge {e} has an endpoint outside the node set"),
                    })
                }
            };
            adj[lu].push(lv);
            adj[lv].push(lu);
            local_endpoints.push((lu, lv));
        }
        // |E| = |V| - 1 plus connectivity implies acyclicity.
        let mut seen = vec![false; nodes.len()];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(l) = queue.pop_front() {
            for &nb in &adj[l] {
                if !seen[nb] {
                    seen[nb] = true;
                    reached += 1;
                    queue.push_back(nb);
                }
            }
        }
        if reached != nodes.len() {
            return Err(Error::NotATree {
                tree: tree_id,
                reason: "disconnected node set".into(),
            });
        }
        let cards: Vec<usize> = nodes.iter().map(|&u| mrf.cardinality(u)).collect();
        let theta = TableSet {
            node: cards.iter().map(|&k| vec![0.0; k]).collect(),
            edge: local_endpoints
                .iter()
                .map(|&(lu, lv)| vec![0.0; cards[lu] * cards[lv]])
                .collect(),
        };
        Ok(TreeSubgraph {
            tree_id,
            nodes,
            edges,
            local_endpoints,
            cards,
            theta,
            rho,
        })
    }

    pub fn tree_id(&self) -> usize {
        self.tree_id
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Global node ids in local-index order (ascending).
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Global edge ids in local-index order (ascending).
    pub fn edges(&self) -> &[usize] {
        &self.edges
    }

    /// Local endpoint indices of each local edge, canonical orientation.
    pub fn local_endpoints(&self) -> &[(usize, usize)] {
        &self.local_endpoints
    }

    /// Label count per local node.
    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn set_rho(&mut self, rho: f64) -> Result<()> {
        if rho <= 0.0 || !rho.is_finite() {
            return Err(Error::NonPositiveRho { rho });
        }
        self.rho = rho;
        Ok(())
    }

    /// Degree of each local node within this tree.
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.nodes.len()];
        for &(lu, lv) in &self.local_endpoints {
            d[lu] += 1;
            d[lv] += 1;
        }
        d
    }

    /// A table set shaped like this tree with all entries zero.
    pub fn zero_tables(&self) -> TableSet {
        self.theta.zeros_like()
    }

    /// Uniform marginals on this tree.
    pub fn uniform_marginals(&self) -> TableSet {
        TableSet {
            node: self.cards.iter().map(|&k| vec![1.0 / k as f64; k]).collect(),
            edge: self
                .local_endpoints
                .iter()
                .map(|&(lu, lv)| {
                    let n = self.cards[lu] * self.cards[lv];
                    vec![1.0 / n as f64; n]
                })
                .collect(),
        }
    }
}

/// A defect found by [`validate_cover`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CoverDefect {
    NodeUncovered { node: usize },
    EdgeUncovered { edge: usize },
    TreeNotValid { tree: usize, reason: String },
    MembershipMismatch { what: String },
}

impl std::fmt::Display for CoverDefect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CoverDefect::NodeUncovered { node } => write!(f, "node {node} uncovered"),
            CoverDefect::EdgeUncovered { edge } => write!(f, "edge {edge} uncovered"),
            CoverDefect::TreeNotValid { tree, reason } => write!(f, "tree {tree}: {reason}"),
            CoverDefect::MembershipMismatch { what } => write!(f, "membership mismatch: {what}"),
        }
    }
}

/// A tree cover with per-component membership lists (which trees hold a
/// copy of each global node/edge, and at which local index).
#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionPlan {
    trees: Vec<TreeSubgraph>,
    /// Per global node: (tree_id, local node index), ascending tree_id.
    node_membership: Vec<Vec<(usize, usize)>>,
    /// Per global edge: (tree_id, local edge index), ascending tree_id.
    edge_membership: Vec<Vec<(usize, usize)>>,
}

impl DecompositionPlan {
    /// Assembles a plan from trees, deriving membership lists. Trees must
    /// already carry consecutive ids starting at zero.
    pub fn from_trees(trees: Vec<TreeSubgraph>, mrf: &PairwiseMRF) -> Result<Self> {
        let mut node_membership = vec![Vec::new(); mrf.num_nodes()];
        let mut edge_membership = vec![Vec::new(); mrf.num_edges()];
        for (i, tree) in trees.iter().enumerate() {
            if tree.tree_id != i {
                return Err(Error::InvalidPlan(vec![CoverDefect::MembershipMismatch {
                    what: format!("tree at position {i} has id {}", tree.tree_id),
                }]));
            }
            for (l, &g) in tree.nodes.iter().enumerate() {
                node_membership[g].push((i, l));
            }
            for (l, &g) in tree.edges.iter().enumerate() {
                edge_membership[g].push((i, l));
            }
        }
        let plan = DecompositionPlan {
            trees,
            node_membership,
            edge_membership,
        };
        let defects = validate_cover(&plan, mrf);
        if defects.is_empty() {
            Ok(plan)
        } else {
            Err(Error::InvalidPlan(defects))
        }
    }

    pub fn trees(&self) -> &[TreeSubgraph] {
        &self.trees
    }

    pub fn trees_mut(&mut self) -> &mut [TreeSubgraph] {
        &mut self.trees
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn node_membership(&self, u: usize) -> &[(usize, usize)] {
        &self.node_membership[u]
    }

    pub fn edge_membership(&self, e: usize) -> &[(usize, usize)] {
        &self.edge_membership[e]
    }

    /// Number of scalar consensus equalities the plan maintains: one per
    /// label (or label pair) per copy of every component held by two or
    /// more trees.
    pub fn consensus_constraint_count(&self, mrf: &PairwiseMRF) -> usize {
        let mut count = 0;
        for (u, members) in self.node_membership.iter().enumerate() {
            if members.len() >= 2 {
                count += members.len() * mrf.cardinality(u);
            }
        }
        for (e, members) in self.edge_membership.iter().enumerate() {
            if members.len() >= 2 {
                let (u, v) = mrf.edges()[e];
                count += members.len() * mrf.cardinality(u) * mrf.cardinality(v);
            }
        }
        count
    }
}

/// One two-node tree per edge of the graph.
pub fn edge_decomposition(mrf: &PairwiseMRF) -> Result<DecompositionPlan> {
    if mrf.num_edges() == 0 {
        return Err(Error::EdgelessGraph);
    }
    let trees = mrf
        .edges()
        .iter()
        .enumerate()
        .map(|(e, &(u, v))| TreeSubgraph::new(e, vec![u, v], vec![e], mrf, 1.0))
        .collect::<Result<Vec<_>>>()?;
    DecompositionPlan::from_trees(trees, mrf)
}

/// Greedy cover by spanning forests: repeatedly take the breadth-first
/// spanning tree, rooted at the lowest-index node still touching an
/// uncovered edge, of the subgraph induced by the uncovered edges, until
/// every edge is covered. Disconnected graphs are covered per component;
/// isolated nodes become one-node trees appended in index order. The
/// result depends only on the input; `_seed` is reserved for randomized
/// cover strategies.
pub fn tree_cover(mrf: &PairwiseMRF, _seed: u64) -> Result<DecompositionPlan> {
    if mrf.num_edges() == 0 {
        return Err(Error::EdgelessGraph);
    }
    let mut covered = vec![false; mrf.num_edges()];
    let mut remaining = mrf.num_edges();
    // Adjacency over global edges; filtered by `covered` during each pass.
    let mut adj = vec![Vec::new(); mrf.num_nodes()];
    for (e, &(u, v)) in mrf.edges().iter().enumerate() {
        adj[u].push((v, e));
        adj[v].push((u, e));
    }
    for nbrs in &mut adj {
        nbrs.sort_unstable();
    }
    let mut trees = Vec::new();
    while remaining > 0 {
        let start = (0..mrf.num_nodes())
            .find(|&u| adj[u].iter().any(|&(_, e)| !covered[e]))
            .expect("uncovered edge must have an endpoint");
        let mut tree_nodes = vec![start];
        let mut tree_edges = Vec::new();
        let mut in_tree = std::collections::HashSet::from([start]);
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &(v, e) in &adj[u] {
                if covered[e] || in_tree.contains(&v) {
                    continue;
                }
                covered[e] = true;
                remaining -= 1;
                in_tree.insert(v);
                tree_nodes.push(v);
                tree_edges.push(e);
                queue.push_back(v);
            }
        }
        let id = trees.len();
        trees.push(TreeSubgraph::new(id, tree_nodes, tree_edges, mrf, 1.0)?);
    }
    for u in 0..mrf.num_nodes() {
        if adj[u].is_empty() {
            let id = trees.len();
            trees.push(TreeSubgraph::new(id, vec![u], vec![], mrf, 1.0)?);
        }
    }
    DecompositionPlan::from_trees(trees, mrf)
}

/// Checks every tree's structure, full node/edge cover, and membership-list
/// consistency. Returns the list of defects; never fails.
pub fn validate_cover(plan: &DecompositionPlan, mrf: &PairwiseMRF) -> Vec<CoverDefect> {
    let mut defects = Vec::new();
    for tree in &plan.trees {
        // Re-run the structural checks independently of the constructor.
        if tree.edges.len() + 1 != tree.nodes.len() {
            defects.push(CoverDefect::TreeNotValid {
                tree: tree.tree_id,
                reason: if tree.edges.len() + 1 > tree.nodes.len() {
                    "cyclic".into()
                } else {
                    "disconnected".into()
                },
            });
            continue;
        }
        let mut adj = vec![Vec::new(); tree.nodes.len()];
        let mut ok = true;
        for &e in &tree.edges {
            if e >= mrf.num_edges() {
                defects.push(CoverDefect::TreeNotValid {
                    tree: tree.tree_id,
                    reason: format!("edge id {e} out of range"),
                });
                ok = false;
                continue;
            }
            let (gu, gv) = mrf.edges()[e];
            match (
                tree.nodes.binary_search(&gu),
                tree.nodes.binary_search(&gv),
            ) {
                (Ok(a), Ok(b)) => {
                    adj[a].push(b);
                    adj[b].push(a);
                }
                _ => {
                    defects.push(CoverDefect::TreeNotValid {
                        tree: tree.tree_id,
                        reason: format!("edge {e} endpoint outside node set"),
                    });
                    ok = false;
                }
            }
        }
        if ok {
            let mut seen = vec![false; tree.nodes.len()];
            let mut queue = std::collections::VecDeque::from([0usize]);
            seen[0] = true;
            let mut reached = 1;
            while let Some(l) = queue.pop_front() {
                for &nb in &adj[l] {
                    if !seen[nb] {
                        seen[nb] = true;
                        reached += 1;
                        queue.push_back(nb);
                    }
                }
            }
            if reached != tree.nodes.len() {
                defects.push(CoverDefect::TreeNotValid {
                    tree: tree.tree_id,
                    reason: "disconnected".into(),
                });
            }
        }
    }
    for u in 0..mrf.num_nodes() {
        let members = &plan.node_membership[u];
        if members.is_empty() {
            defects.push(CoverDefect::NodeUncovered { node: u });
        }
        if members.windows(2).any(|w| w[0].0 >= w[1].0) {
            defects.push(CoverDefect::MembershipMismatch {
                what: format!("node {u} membership not ascending by tree id"),
            });
        }
        for &(t, l) in members {
            if plan
                .trees
                .get(t)
                .and_then(|tr| tr.nodes.get(l))
                .copied()
                != Some(u)
            {
                defects.push(CoverDefect::MembershipMismatch {
                    what: format!("node {u} claims copy at tree {t} local {l}"),
                });
            }
        }
    }
    for e in 0..mrf.num_edges() {
        let members = &plan.edge_membership[e];
        if members.is_empty() {
            defects.push(CoverDefect::EdgeUncovered { edge: e });
        }
        for &(t, l) in members {
            if plan
                .trees
                .get(t)
                .and_then(|tr| tr.edges.get(l))
                .copied()
                != Some(e)
            {
                defects.push(CoverDefect::MembershipMismatch {
                    what: format!("edge {e} claims copy at tree {t} local {l}"),
                });
            }
        }
    }
    defects
}

/// Fills each tree's cost tables so that the weighted sum of copies
/// reconstructs the cost model exactly: every copy of a component receives
/// the component's cost divided by the total replication weight
/// `sum over trees holding it of rho`.
pub fn split_potentials(
    cost_mrf: &PairwiseMRF,
    plan: &DecompositionPlan,
    rho: &[f64],
) -> Result<DecompositionPlan> {
    if rho.len() != plan.num_trees() {
        return Err(Error::InvalidPlan(vec![CoverDefect::MembershipMismatch {
            what: format!("{} rho values for {} trees", rho.len(), plan.num_trees()),
        }]));
    }
    for &r in rho {
        if r <= 0.0 || !r.is_finite() {
            return Err(Error::NonPositiveRho { rho: r });
        }
    }
    let mut out = plan.clone();
    for (tree, &r) in out.trees.iter_mut().zip(rho) {
        tree.rho = r;
    }
    for (u, members) in plan.node_membership.iter().enumerate() {
        let weight: f64 = members.iter().map(|&(t, _)| rho[t]).sum();
        if weight <= 0.0 {
            return Err(Error::UncoveredComponent {
                component: format!("node {u}"),
            });
        }
        for &(t, l) in members {
            for (dst, &src) in out.trees[t].theta.node[l]
                .iter_mut()
                .zip(cost_mrf.node_potential(u))
            {
                *dst = src / weight;
            }
        }
    }
    for (e, members) in plan.edge_membership.iter().enumerate() {
        let weight: f64 = members.iter().map(|&(t, _)| rho[t]).sum();
        if weight <= 0.0 {
            return Err(Error::UncoveredComponent {
                component: format!("edge {e}"),
            });
        }
        for &(t, l) in members {
            for (dst, &src) in out.trees[t].theta.edge[l]
                .iter_mut()
                .zip(cost_mrf.edge_potential(e))
            {
                *dst = src / weight;
            }
        }
    }
    Ok(out)
}
