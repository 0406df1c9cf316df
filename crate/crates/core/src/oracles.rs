//! Brute-force references for desk-scale verification: exhaustive MAP,
//! exhaustive marginals and log-partition, joint KL between tree
//! distributions, and the margin by which the Bethe-Bregman divergence
//! dominates the squared consensus distance.

use crate::decomposition::TreeSubgraph;
use crate::error::{Error, Result};
use crate::mrf::{Assignment, PairwiseMRF, TableSet};
use crate::tree::{bethe_divergence, tree_violation, TreeParameters};

const MAP_GUARD: f64 = 1e7;
const MARGINAL_GUARD: f64 = 1e6;

fn state_space(cards: &[usize]) -> f64 {
    cards.iter().map(|&k| k as f64).product()
}

/// Calls `f` on every assignment of the given cardinalities, in
/// lexicographic order with index 0 most significant.
fn for_each_assignment(cards: &[usize], mut f: impl FnMut(&[usize])) {
    let n = cards.len();
    let mut labels = vec![0usize; n];
    loop {
        f(&labels);
        let mut i = n;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            labels[i] += 1;
            if labels[i] < cards[i] {
                break;
            }
            labels[i] = 0;
        }
    }
}

/// Exact MAP by enumeration; ties resolve to the lexicographically smallest
/// argmax. Guarded at 1e7 assignments.
pub fn brute_force_map(mrf: &PairwiseMRF) -> Result<(Assignment, f64)> {
    let size = state_space(mrf.cardinalities());
    if size > MAP_GUARD {
        return Err(Error::StateSpaceTooLarge {
            size,
            guard: MAP_GUARD,
        });
    }
    let mut best_labels = vec![0usize; mrf.num_nodes()];
    let mut best = f64::NEG_INFINITY;
    for_each_assignment(mrf.cardinalities(), |labels| {
        // Same summation order as eval_assignment: nodes then edges.
        let mut score = 0.0;
        for (u, &x) in labels.iter().enumerate() {
            score += mrf.node_potential(u)[x];
        }
        for (e, &(u, v)) in mrf.edges().iter().enumerate() {
            score += mrf.edge_potential_at(e, labels[u], labels[v]);
        }
        if score > best {
            best = score;
            best_labels.copy_from_slice(labels);
        }
    });
    Ok((Assignment::new(best_labels), best))
}

/// Score of one assignment of a tree's local nodes under tree-scope tables,
/// summed in local node then edge order.
fn tree_score(tree: &TreeSubgraph, tables: &TableSet, labels: &[usize]) -> f64 {
    let mut s = 0.0;
    for (l, t) in tables.node.iter().enumerate() {
        s += t[labels[l]];
    }
    for (e, &(lu, lv)) in tree.local_endpoints().iter().enumerate() {
        s += tables.edge[e][labels[lu] * tree.cards()[lv] + labels[lv]];
    }
    s
}

/// Exact marginals and log-partition of `p(x) proportional to
/// exp(sum of eta)` on a tree, by full enumeration. Guarded at 1e6
/// assignments.
pub fn brute_force_marginals(
    tree: &TreeSubgraph,
    eta: &TreeParameters,
) -> Result<(TableSet, f64)> {
    let size = state_space(tree.cards());
    if size > MARGINAL_GUARD {
        return Err(Error::StateSpaceTooLarge {
            size,
            guard: MARGINAL_GUARD,
        });
    }
    let mut max_score = f64::NEG_INFINITY;
    for_each_assignment(tree.cards(), |labels| {
        max_score = max_score.max(tree_score(tree, eta, labels));
    });
    let mut z = 0.0;
    let mut acc = tree.zero_tables();
    for_each_assignment(tree.cards(), |labels| {
        let w = (tree_score(tree, eta, labels) - max_score).exp();
        z += w;
        for (l, &x) in labels.iter().enumerate() {
            acc.node[l][x] += w;
        }
        for (e, &(lu, lv)) in tree.local_endpoints().iter().enumerate() {
            acc.edge[e][labels[lu] * tree.cards()[lv] + labels[lv]] += w;
        }
    });
    for t in acc.node.iter_mut().chain(acc.edge.iter_mut()) {
        for x in t.iter_mut() {
            *x /= z;
        }
    }
    Ok((acc, max_score + z.ln()))
}

/// Log-density of the joint tree distribution induced by locally consistent
/// marginals: `sum_e ln m_e - sum_u (d_u - 1) ln m_u` at the assignment.
fn joint_log_density(
    tree: &TreeSubgraph,
    degrees: &[usize],
    m: &TableSet,
    labels: &[usize],
) -> f64 {
    let mut lp = 0.0;
    for (e, &(lu, lv)) in tree.local_endpoints().iter().enumerate() {
        lp += m.edge[e][labels[lu] * tree.cards()[lv] + labels[lv]].ln();
    }
    for (l, &x) in labels.iter().enumerate() {
        lp -= (degrees[l] as f64 - 1.0) * m.node[l][x].ln();
    }
    lp
}

/// KL divergence between the joint tree distributions induced by two
/// strictly positive, locally consistent marginal sets, by enumeration.
pub fn joint_kl(tree: &TreeSubgraph, mu: &TableSet, nu: &TableSet) -> Result<f64> {
    let size = state_space(tree.cards());
    if size > MARGINAL_GUARD {
        return Err(Error::StateSpaceTooLarge {
            size,
            guard: MARGINAL_GUARD,
        });
    }
    let degrees = tree.degrees();
    let mut kl = 0.0;
    for_each_assignment(tree.cards(), |labels| {
        let lp = joint_log_density(tree, &degrees, mu, labels);
        let lq = joint_log_density(tree, &degrees, nu, labels);
        kl += lp.exp() * (lp - lq);
    });
    Ok(kl)
}

const CONSISTENCY_TOL: f64 = 1e-6;

/// Margin by which the proximal weight dominates the consensus penalty:
/// `alpha * d_phi(mu || nu) - (beta / 2) * ||mu - nu||^2`.
///
/// With `alpha = beta * (2 n - 1)^2` for an `n`-node tree the margin is
/// nonnegative for every pair of locally consistent tree marginals; this is
/// the step-size condition the solver's `safe_alpha` mode enforces. Both
/// arguments must be strictly positive and locally consistent, since the
/// divergence equals a joint KL only for genuine tree marginals.
pub fn divergence_margin(
    tree: &TreeSubgraph,
    mu: &TableSet,
    nu: &TableSet,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    for m in [mu, nu] {
        let violation = tree_violation(tree, m)?;
        if violation > CONSISTENCY_TOL {
            return Err(Error::InconsistentMarginals { violation });
        }
        if m.entries().any(|x| x <= 0.0) {
            return Err(Error::NonPositiveMarginal {
                where_: "divergence margin input".into(),
            });
        }
    }
    let d = bethe_divergence(tree, mu, nu)?;
    Ok(alpha * d - 0.5 * beta * mu.sq_dist(nu))
}

/// The step-size threshold for one tree: `beta * (2 n - 1)^2`.
pub fn safe_alpha_for(tree: &TreeSubgraph, beta: f64) -> f64 {
    let n = tree.num_nodes() as f64;
    beta * (2.0 * n - 1.0) * (2.0 * n - 1.0)
}

/// Strictly positive, locally consistent marginals sampled by drawing
/// random log-domain parameters and taking their exact tree marginals.
pub fn random_consistent_marginals(
    tree: &TreeSubgraph,
    scale: f64,
    rng: &mut impl rand::Rng,
) -> TableSet {
    let mut eta = tree.zero_tables();
    for t in eta.node.iter_mut().chain(eta.edge.iter_mut()) {
        for x in t.iter_mut() {
            *x = rng.gen_range(-scale..=scale);
        }
    }
    crate::tree::sum_product_marginals(tree, &eta)
        .expect("finite parameters on a valid tree")
        .0
}
