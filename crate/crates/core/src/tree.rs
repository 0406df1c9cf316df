//! Exact linear-time inference on trees: two-pass sum-product marginals
//! with log-partition, max-product MAP with backtracking, the Bethe entropy
//! of tree marginals, its coordinate-wise gradient, and the induced Bregman
//! divergence.
//!
//! All message passing runs in the log domain with per-hop max
//! normalization; the subtracted constants of the upward pass accumulate
//! into the log-partition value. Roots are the lowest-index node of each
//! tree.

use crate::decomposition::TreeSubgraph;
use crate::error::{Error, Result};
use crate::mrf::{local_violation, TableSet};

/// Log-domain parameter tables on a tree's nodes and edges.
pub type TreeParameters = TableSet;

/// Entries below this threshold are treated as exact zeros by the entropy
/// (0 ln 0 = 0) and lifted to it before logs by the gradient. Interior
/// iterates produced by sum-product never need it; it guards user input.
pub const ZERO_CLAMP: f64 = 1e-300;

/// Fixed message order for one tree: breadth-first from the lowest-index
/// node. Reused across solver iterations.
#[derive(Clone, Debug)]
pub struct TreeSchedule {
    /// Local node indices in breadth-first order; `order[0]` is the root.
    order: Vec<usize>,
    /// Per local node: parent local node and connecting local edge.
    parent: Vec<Option<(usize, usize)>>,
    /// Per local node: (neighbor, local edge), ascending by neighbor.
    adj: Vec<Vec<(usize, usize)>>,
}

impl TreeSchedule {
    pub fn new(tree: &TreeSubgraph) -> Result<Self> {
        let n = tree.num_nodes();
        let mut adj = vec![Vec::new(); n];
        for (j, &(lu, lv)) in tree.local_endpoints().iter().enumerate() {
            adj[lu].push((lv, j));
            adj[lv].push((lu, j));
        }
        for nbrs in &mut adj {
            nbrs.sort_unstable();
        }
        if tree.local_endpoints().len() + 1 != n {
            return Err(Error::NotATree {
                tree: tree.tree_id(),
                reason: format!("{} nodes but {} edges", n, tree.local_endpoints().len()),
            });
        }
        // Root at local index 0: node lists are ascending, so this is the
        // lowest global id.
        let mut order = Vec::with_capacity(n);
        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        order.push(0);
        seen[0] = true;
        let mut head = 0;
        while head < order.len() {
            let u = order[head];
            head += 1;
            for &(v, e) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some((u, e));
                    order.push(v);
                }
            }
        }
        if order.len() != n {
            return Err(Error::NotATree {
                tree: tree.tree_id(),
                reason: "disconnected".into(),
            });
        }
        Ok(TreeSchedule { order, parent, adj })
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    let sum: f64 = xs.iter().map(|&x| (x - mx).exp()).sum();
    mx + sum.ln()
}

/// Per-edge message pair, one vector toward each canonical endpoint.
struct Messages {
    to_u: Vec<Vec<f64>>,
    to_v: Vec<Vec<f64>>,
}

impl Messages {
    fn zeros(tree: &TreeSubgraph) -> Self {
        let to_u = tree
            .local_endpoints()
            .iter()
            .map(|&(lu, _)| vec![0.0; tree.cards()[lu]])
            .collect();
        let to_v = tree
            .local_endpoints()
            .iter()
            .map(|&(_, lv)| vec![0.0; tree.cards()[lv]])
            .collect();
        Messages { to_u, to_v }
    }

    fn into_node(&self, e: usize, node: usize, endpoints: &[(usize, usize)]) -> &[f64] {
        if endpoints[e].0 == node {
            &self.to_u[e]
        } else {
            &self.to_v[e]
        }
    }
}

fn check_eta(tree: &TreeSubgraph, eta: &TreeParameters) -> Result<()> {
    if eta.node.len() != tree.num_nodes() || eta.edge.len() != tree.local_endpoints().len() {
        return Err(Error::NotATree {
            tree: tree.tree_id(),
            reason: "parameter shape does not match the tree".into(),
        });
    }
    for (l, t) in eta.node.iter().enumerate() {
        if t.len() != tree.cards()[l] {
            return Err(Error::NodeTableShape {
                what: "tree parameter",
                node: l,
                expected: tree.cards()[l],
                got: t.len(),
            });
        }
        if t.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteNode {
                what: "tree parameter",
                node: l,
            });
        }
    }
    for (j, t) in eta.edge.iter().enumerate() {
        let (lu, lv) = tree.local_endpoints()[j];
        let expected = tree.cards()[lu] * tree.cards()[lv];
        if t.len() != expected {
            return Err(Error::EdgeTableShape {
                what: "tree parameter",
                edge: j,
                expected,
                got: t.len(),
            });
        }
        if t.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteEdge {
                what: "tree parameter",
                edge: j,
            });
        }
    }
    Ok(())
}

/// Exact node and edge marginals of `p(x) proportional to exp(sum of eta)`
/// on a tree, plus the log-partition value. Two passes, `O(n k^2)`. The
/// output is strictly positive and locally consistent to machine precision.
pub fn sum_product_marginals(
    tree: &TreeSubgraph,
    eta: &TreeParameters,
) -> Result<(TableSet, f64)> {
    let schedule = TreeSchedule::new(tree)?;
    let mut out = tree.zero_tables();
    let log_z = sum_product_into(tree, &schedule, eta, &mut out)?;
    Ok((out, log_z))
}

/// Schedule-reusing form of [`sum_product_marginals`]; writes marginals
/// into `out` and returns the log-partition value.
pub fn sum_product_into(
    tree: &TreeSubgraph,
    schedule: &TreeSchedule,
    eta: &TreeParameters,
    out: &mut TableSet,
) -> Result<f64> {
    check_eta(tree, eta)?;
    let endpoints = tree.local_endpoints();
    let cards = tree.cards();
    let mut msgs = Messages::zeros(tree);
    // inbox[l] accumulates eta_l plus every message that has arrived at l.
    let mut inbox: Vec<Vec<f64>> = eta.node.clone();
    let mut log_z = 0.0;
    let mut scratch = Vec::new();

    // Leaf-to-root pass.
    for &c in schedule.order.iter().rev() {
        let Some((p, e)) = schedule.parent[c] else { continue };
        let (lu, lv) = endpoints[e];
        let table = &eta.edge[e];
        let kv = cards[lv];
        let (dst, kp) = if c == lu {
            (&mut msgs.to_v[e], cards[lv])
        } else {
            (&mut msgs.to_u[e], cards[lu])
        };
        for xp in 0..kp {
            scratch.clear();
            if c == lu {
                for xc in 0..cards[c] {
                    scratch.push(inbox[c][xc] + table[xc * kv + xp]);
                }
            } else {
                for xc in 0..cards[c] {
                    scratch.push(inbox[c][xc] + table[xp * kv + xc]);
                }
            }
            dst[xp] = log_sum_exp(&scratch);
        }
        let mx = dst.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for x in dst.iter_mut() {
            *x -= mx;
        }
        log_z += mx;
        for (acc, &m) in inbox[p].iter_mut().zip(msgs.into_node(e, p, endpoints)) {
            *acc += m;
        }
    }
    log_z += log_sum_exp(&inbox[schedule.order[0]]);

    // Root-to-leaf pass; normalizers of downward hops cancel in the
    // marginal normalization and are dropped.
    for &p in schedule.order.iter() {
        for &(c, e) in &schedule.adj[p] {
            if schedule.parent[c] != Some((p, e)) {
                continue;
            }
            let (lu, lv) = endpoints[e];
            let table = &eta.edge[e];
            let kv = cards[lv];
            let from_c: Vec<f64> = msgs.into_node(e, p, endpoints).to_vec();
            let dst = if p == lu {
                &mut msgs.to_v[e]
            } else {
                &mut msgs.to_u[e]
            };
            for xc in 0..cards[c] {
                scratch.clear();
                if p == lu {
                    for xp in 0..cards[p] {
                        scratch.push(inbox[p][xp] - from_c[xp] + table[xp * kv + xc]);
                    }
                } else {
                    for xp in 0..cards[p] {
                        scratch.push(inbox[p][xp] - from_c[xp] + table[xc * kv + xp]);
                    }
                }
                dst[xc] = log_sum_exp(&scratch);
            }
            let mx = dst.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for x in dst.iter_mut() {
                *x -= mx;
            }
            for (acc, &m) in inbox[c].iter_mut().zip(msgs.into_node(e, c, endpoints)) {
                *acc += m;
            }
        }
    }

    for (l, belief) in inbox.iter().enumerate() {
        let mx = belief.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (dst, &b) in out.node[l].iter_mut().zip(belief) {
            *dst = (b - mx).exp();
            sum += *dst;
        }
        for dst in out.node[l].iter_mut() {
            *dst /= sum;
        }
    }
    for (e, &(lu, lv)) in endpoints.iter().enumerate() {
        let table = &eta.edge[e];
        let (ku, kv) = (cards[lu], cards[lv]);
        let msg_u = &msgs.to_u[e];
        let msg_v = &msgs.to_v[e];
        let dst = &mut out.edge[e];
        let mut mx = f64::NEG_INFINITY;
        for xu in 0..ku {
            let a = inbox[lu][xu] - msg_u[xu];
            for xv in 0..kv {
                let b = inbox[lv][xv] - msg_v[xv];
                let val = a + table[xu * kv + xv] + b;
                dst[xu * kv + xv] = val;
                mx = mx.max(val);
            }
        }
        let mut sum = 0.0;
        for x in dst.iter_mut() {
            *x = (*x - mx).exp();
            sum += *x;
        }
        for x in dst.iter_mut() {
            *x /= sum;
        }
    }
    Ok(log_z)
}

/// Exact maximizer of `sum of scores` over assignments of a tree, by
/// two-pass max-product with backtracking. Ties break toward the lowest
/// label at the root choice and at every backtracking step. Returns the
/// per-local-node labels and the score of the returned assignment,
/// re-evaluated by direct summation in local node then edge order.
pub fn max_product_map(tree: &TreeSubgraph, scores: &TableSet) -> Result<(Vec<usize>, f64)> {
    let schedule = TreeSchedule::new(tree)?;
    max_product_into(tree, &schedule, scores)
}

/// Schedule-reusing form of [`max_product_map`].
pub fn max_product_into(
    tree: &TreeSubgraph,
    schedule: &TreeSchedule,
    scores: &TableSet,
) -> Result<(Vec<usize>, f64)> {
    check_eta(tree, scores)?;
    let endpoints = tree.local_endpoints();
    let cards = tree.cards();
    let mut msgs = Messages::zeros(tree);
    let mut inbox: Vec<Vec<f64>> = scores.node.clone();

    for &c in schedule.order.iter().rev() {
        let Some((p, e)) = schedule.parent[c] else { continue };
        let (lu, lv) = endpoints[e];
        let table = &scores.edge[e];
        let kv = cards[lv];
        let (dst, kp) = if c == lu {
            (&mut msgs.to_v[e], cards[lv])
        } else {
            (&mut msgs.to_u[e], cards[lu])
        };
        for xp in 0..kp {
            let mut best = f64::NEG_INFINITY;
            for xc in 0..cards[c] {
                let val = if c == lu {
                    inbox[c][xc] + table[xc * kv + xp]
                } else {
                    inbox[c][xc] + table[xp * kv + xc]
                };
                if val > best {
                    best = val;
                }
            }
            dst[xp] = best;
        }
        for (acc, &m) in inbox[p].iter_mut().zip(msgs.into_node(e, p, endpoints)) {
            *acc += m;
        }
    }

    let mut labels = vec![0usize; tree.num_nodes()];
    let root = schedule.order[0];
    let mut best = 0;
    for (x, &b) in inbox[root].iter().enumerate() {
        if b > inbox[root][best] {
            best = x;
        }
    }
    labels[root] = best;
    // Backtrack in breadth-first order: a node's inbox holds its score plus
    // all child messages, which is exactly the quantity to maximize given
    // the parent's label.
    for &p in schedule.order.iter() {
        for &(c, e) in &schedule.adj[p] {
            if schedule.parent[c] != Some((p, e)) {
                continue;
            }
            let (lu, lv) = endpoints[e];
            let table = &scores.edge[e];
            let kv = cards[lv];
            let xp = labels[p];
            let mut arg = 0;
            let mut best = f64::NEG_INFINITY;
            for xc in 0..cards[c] {
                let val = if c == lu {
                    inbox[c][xc] + table[xc * kv + xp]
                } else {
                    inbox[c][xc] + table[xp * kv + xc]
                };
                if val > best {
                    best = val;
                    arg = xc;
                }
            }
            labels[c] = arg;
        }
    }

    let mut value = 0.0;
    for (l, t) in scores.node.iter().enumerate() {
        value += t[labels[l]];
    }
    for (e, &(lu, lv)) in endpoints.iter().enumerate() {
        value += scores.edge[e][labels[lu] * cards[lv] + labels[lv]];
    }
    Ok((labels, value))
}

fn check_marginal_shape(tree: &TreeSubgraph, m: &TableSet, what: &'static str) -> Result<()> {
    if m.node.len() != tree.num_nodes() || m.edge.len() != tree.local_endpoints().len() {
        return Err(Error::NotATree {
            tree: tree.tree_id(),
            reason: format!("{what} shape does not match the tree"),
        });
    }
    for (l, t) in m.node.iter().enumerate() {
        if t.len() != tree.cards()[l] {
            return Err(Error::NodeTableShape {
                what,
                node: l,
                expected: tree.cards()[l],
                got: t.len(),
            });
        }
    }
    for (j, t) in m.edge.iter().enumerate() {
        let (lu, lv) = tree.local_endpoints()[j];
        let expected = tree.cards()[lu] * tree.cards()[lv];
        if t.len() != expected {
            return Err(Error::EdgeTableShape {
                what,
                edge: j,
                expected,
                got: t.len(),
            });
        }
    }
    Ok(())
}

fn plogp(p: f64) -> f64 {
    if p < ZERO_CLAMP {
        0.0
    } else {
        p * p.ln()
    }
}

/// Bethe entropy of tree marginals: the sum of edge-table entropies minus
/// degree-weighted node entropies,
/// `sum_uv H_uv - sum_u (d_u - 1) H_u`,
/// entries treated as independent coordinates. On locally consistent
/// marginals this equals `sum_u H_u - sum_uv I_uv` and the entropy of the
/// induced joint tree distribution.
pub fn bethe_entropy(tree: &TreeSubgraph, m: &TableSet) -> Result<f64> {
    check_marginal_shape(tree, m, "marginal")?;
    for (l, t) in m.node.iter().enumerate() {
        if t.iter().any(|&x| x < 0.0) {
            return Err(Error::NegativeMarginal {
                where_: format!("node {l}"),
            });
        }
    }
    for (j, t) in m.edge.iter().enumerate() {
        if t.iter().any(|&x| x < 0.0) {
            return Err(Error::NegativeMarginal {
                where_: format!("edge {j}"),
            });
        }
    }
    let degrees = tree.degrees();
    let mut h = 0.0;
    for t in &m.edge {
        for &p in t {
            h -= plogp(p);
        }
    }
    for (l, t) in m.node.iter().enumerate() {
        let hu: f64 = t.iter().map(|&p| -plogp(p)).sum();
        h -= (degrees[l] as f64 - 1.0) * hu;
    }
    Ok(h)
}

/// Coordinate-wise gradient of the negative Bethe entropy:
/// edge entries `1 + ln m_uv`, node entries `-(d_u - 1)(1 + ln m_u)`.
/// Entries in `(0, 1e-300)` are lifted to the clamp before the log;
/// nonpositive entries are rejected.
pub fn bethe_gradient(tree: &TreeSubgraph, m: &TableSet) -> Result<TableSet> {
    check_marginal_shape(tree, m, "marginal")?;
    let degrees = tree.degrees();
    let mut grad = m.zeros_like();
    for (l, t) in m.node.iter().enumerate() {
        let w = -(degrees[l] as f64 - 1.0);
        for (g, &p) in grad.node[l].iter_mut().zip(t) {
            if p <= 0.0 {
                return Err(Error::NonPositiveMarginal {
                    where_: format!("node {l}"),
                });
            }
            *g = w * (1.0 + p.max(ZERO_CLAMP).ln());
        }
    }
    for (j, t) in m.edge.iter().enumerate() {
        for (g, &p) in grad.edge[j].iter_mut().zip(t) {
            if p <= 0.0 {
                return Err(Error::NonPositiveMarginal {
                    where_: format!("edge {j}"),
                });
            }
            *g = 1.0 + p.max(ZERO_CLAMP).ln();
        }
    }
    Ok(grad)
}

/// Bregman divergence induced by the negative Bethe entropy:
/// `phi(m) - phi(m_ref) - <grad phi(m_ref), m - m_ref>`.
/// When both arguments are locally consistent tree marginals, this equals
/// the KL divergence between the induced joint distributions.
pub fn bethe_divergence(tree: &TreeSubgraph, m: &TableSet, m_ref: &TableSet) -> Result<f64> {
    let phi_m = -bethe_entropy(tree, m)?;
    let phi_ref = -bethe_entropy(tree, m_ref)?;
    let grad_ref = bethe_gradient(tree, m_ref)?;
    let mut inner = 0.0;
    for ((a, b), g) in m.entries().zip(m_ref.entries()).zip(grad_ref.entries()) {
        inner += g * (a - b);
    }
    Ok(phi_m - phi_ref - inner)
}

/// Local-polytope violation of tree-scope tables against the tree's own
/// structure.
pub fn tree_violation(tree: &TreeSubgraph, m: &TableSet) -> Result<f64> {
    check_marginal_shape(tree, m, "marginal")?;
    Ok(local_violation(&m.node, &m.edge, tree.local_endpoints()))
}
