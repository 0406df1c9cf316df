//! Synthetic instance generators: 3-D Potts grids, tree-plus-cross-edge
//! graphs with their natural tree covers, and random tree models.
//!
//! All draws come from per-component ChaCha8 streams keyed by a class tag
//! and the component's id, so the unary table of a node never depends on
//! how many edges the instance has. Everything is reproducible from the
//! seed alone.

use crate::decomposition::{DecompositionPlan, TreeSubgraph};
use crate::error::{Error, Result};
use crate::mrf::PairwiseMRF;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STREAM_NODE: u64 = 1;
const STREAM_EDGE: u64 = 2;
const STREAM_STRUCT: u64 = 3;

fn stream(seed: u64, class: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((class << 56) | (index & ((1 << 56) - 1)));
    rng
}

fn unary_table(seed: u64, node: usize, k: usize, a: f64) -> Vec<f64> {
    let mut rng = stream(seed, STREAM_NODE, node as u64);
    (0..k).map(|_| rng.gen_range(-a..=a)).collect()
}

fn potts_table(seed: u64, num_nodes: usize, u: usize, v: usize, k: usize) -> Vec<f64> {
    let mut rng = stream(seed, STREAM_EDGE, (u * num_nodes + v) as u64);
    let b: f64 = rng.gen_range(-1.0..=1.0);
    let mut table = vec![0.0; k * k];
    for x in 0..k {
        table[x * k + x] = b;
    }
    table
}

fn dense_edge_table(seed: u64, num_nodes: usize, u: usize, v: usize, k: usize, a: f64) -> Vec<f64> {
    let mut rng = stream(seed, STREAM_EDGE, (u * num_nodes + v) as u64);
    (0..k * k).map(|_| rng.gen_range(-a..=a)).collect()
}

/// An `m x n x t` grid with 6-neighborhood edges. Unary entries are i.i.d.
/// uniform on `[-a, a]`; each edge carries a Potts table with a single
/// coupling `b` drawn uniform on `[-1, 1]` on the diagonal and zero off it.
pub fn potts_grid3d(
    m: usize,
    n: usize,
    t: usize,
    k: usize,
    a: f64,
    seed: u64,
) -> Result<PairwiseMRF> {
    assert!(m >= 1 && n >= 1 && t >= 1 && k >= 2 && a > 0.0);
    let num_nodes = m * n * t;
    let id = |i: usize, j: usize, l: usize| (i * n + j) * t + l;
    let mut edges = Vec::new();
    for i in 0..m {
        for j in 0..n {
            for l in 0..t {
                let u = id(i, j, l);
                if l + 1 < t {
                    edges.push((u, id(i, j, l + 1)));
                }
                if j + 1 < n {
                    edges.push((u, id(i, j + 1, l)));
                }
                if i + 1 < m {
                    edges.push((u, id(i + 1, j, l)));
                }
            }
        }
    }
    let node_potentials = (0..num_nodes).map(|u| unary_table(seed, u, k, a)).collect();
    let edge_potentials = edges
        .iter()
        .map(|&(u, v)| potts_table(seed, num_nodes, u, v, k))
        .collect();
    PairwiseMRF::new(vec![k; num_nodes], edges, node_potentials, edge_potentials)
}

/// `m` complete-binary-shaped trees of `s` nodes each, joined by cross
/// edges: for every ordered pair of trees `(i, j)`, `n` source nodes are
/// sampled from tree `i` with replacement and `n` destination nodes from
/// tree `j` without replacement, then connected pairwise. Duplicate edges
/// after canonicalization are kept once. Potentials are drawn as in
/// [`potts_grid3d`].
///
/// Returns the model together with its natural cover: tree `i` plus its
/// outgoing cross edges and their far endpoints, which is again a tree.
pub fn tree_cross_graph(
    m: usize,
    s: usize,
    n: usize,
    k: usize,
    a: f64,
    seed: u64,
) -> Result<(PairwiseMRF, DecompositionPlan)> {
    assert!(m >= 2 && s >= 1 && k >= 2 && a > 0.0);
    if n > s {
        return Err(Error::CrossSampleTooLarge { n, s });
    }
    let num_nodes = m * s;
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut edge_index = std::collections::HashMap::new();
    let mut aug_nodes: Vec<Vec<usize>> = Vec::with_capacity(m);
    let mut aug_edges: Vec<Vec<usize>> = Vec::with_capacity(m);
    for i in 0..m {
        let mut own_edges = Vec::new();
        for c in 1..s {
            let e = (i * s + (c - 1) / 2, i * s + c);
            edge_index.insert(e, edges.len());
            own_edges.push(edges.len());
            edges.push(e);
        }
        aug_nodes.push((i * s..(i + 1) * s).collect());
        aug_edges.push(own_edges);
    }
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let mut rng = stream(seed, STREAM_STRUCT, (i * m + j) as u64);
            let sources: Vec<usize> = (0..n).map(|_| rng.gen_range(0..s)).collect();
            // Partial Fisher-Yates for sampling without replacement.
            let mut pool: Vec<usize> = (0..s).collect();
            for q in 0..n {
                let r = rng.gen_range(q..s);
                pool.swap(q, r);
            }
            for t in 0..n {
                let a_node = i * s + sources[t];
                let b_node = j * s + pool[t];
                let key = (a_node.min(b_node), a_node.max(b_node));
                let id = *edge_index.entry(key).or_insert_with(|| {
                    edges.push(key);
                    edges.len() - 1
                });
                aug_edges[i].push(id);
                aug_nodes[i].push(b_node);
            }
        }
    }
    let node_potentials = (0..num_nodes).map(|u| unary_table(seed, u, k, a)).collect();
    let edge_potentials = edges
        .iter()
        .map(|&(u, v)| potts_table(seed, num_nodes, u, v, k))
        .collect();
    let mrf = PairwiseMRF::new(vec![k; num_nodes], edges, node_potentials, edge_potentials)?;
    let trees = aug_nodes
        .into_iter()
        .zip(aug_edges)
        .enumerate()
        .map(|(i, (nodes, tree_edges))| TreeSubgraph::new(i, nodes, tree_edges, &mrf, 1.0))
        .collect::<Result<Vec<_>>>()?;
    let plan = DecompositionPlan::from_trees(trees, &mrf)?;
    Ok((mrf, plan))
}

/// A uniform random spanning tree over `n_nodes` nodes (random Pruefer
/// sequence), with every potential entry uniform on `[-a, a]`.
pub fn random_tree_mrf(n_nodes: usize, k: usize, a: f64, seed: u64) -> Result<PairwiseMRF> {
    assert!(n_nodes >= 1 && k >= 2 && a > 0.0);
    let mut edges: Vec<(usize, usize)> = Vec::new();
    if n_nodes == 2 {
        edges.push((0, 1));
    } else if n_nodes > 2 {
        let mut rng = stream(seed, STREAM_STRUCT, 0);
        let seq: Vec<usize> = (0..n_nodes - 2).map(|_| rng.gen_range(0..n_nodes)).collect();
        let mut degree = vec![1usize; n_nodes];
        for &x in &seq {
            degree[x] += 1;
        }
        let mut leaves: std::collections::BTreeSet<usize> = (0..n_nodes)
            .filter(|&u| degree[u] == 1)
            .collect();
        for &x in &seq {
            let leaf = *leaves.iter().next().expect("a leaf always remains");
            leaves.remove(&leaf);
            edges.push((leaf.min(x), leaf.max(x)));
            degree[x] -= 1;
            if degree[x] == 1 {
                leaves.insert(x);
            }
        }
        let mut rest = leaves.into_iter();
        let (u, v) = (rest.next().unwrap(), rest.next().unwrap());
        edges.push((u.min(v), u.max(v)));
        edges.sort_unstable();
    }
    let node_potentials = (0..n_nodes).map(|u| unary_table(seed, u, k, a)).collect();
    let edge_potentials = edges
        .iter()
        .map(|&(u, v)| dense_edge_table(seed, n_nodes, u, v, k, a))
        .collect();
    PairwiseMRF::new(vec![k; n_nodes], edges, node_potentials, edge_potentials)
}
