//! The consensus solver: per-tree Bethe proximal steps solved by
//! sum-product, consensus averaging of shared components, dual ascent,
//! residual and dual-bound tracking, ergodic averages, and a deterministic
//! parallel runner.
//!
//! One iteration freezes the current `(m, mu, lambda)` snapshot, updates
//! every tree's marginals in parallel into disjoint buffers, averages the
//! copies of each shared component in ascending tree order, and moves the
//! duals along the new consensus gap. Every reduction runs in a fixed
//! order, so traces are bit-identical for any worker count.

use crate::decomposition::{validate_cover, DecompositionPlan};
use crate::error::{Error, Result};
use crate::mrf::{
    eval_assignment, lp_objective, polytope_violation, round_solution, to_cost, Assignment,
    PairwiseMRF, TableSet,
};
use crate::tree::{max_product_into, sum_product_into, TreeSchedule, ZERO_CLAMP};
use rayon::prelude::*;
use std::time::Instant;

/// Solver parameters. `alpha` is the proximal weight, `beta` the consensus
/// penalty, `rho` the weight applied to every tree. With `safe_alpha` the
/// effective proximal weight is raised to `beta * max over trees of
/// (2 n - 1)^2`, the threshold under which the Bethe divergence is
/// guaranteed to dominate the quadratic penalty.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub threads: usize,
    pub safe_alpha: bool,
    pub trace_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            alpha: 0.05,
            beta: 0.05,
            rho: 1.0,
            max_iters: 10_000,
            tol: 1e-3,
            threads: 1,
            safe_alpha: false,
            trace_every: 10,
        }
    }
}

/// Mutable solver state: per-tree marginals and duals, the global
/// consensus marginal, running ergodic sums, and the best decoding seen.
#[derive(Clone, Debug)]
pub struct SolverState {
    /// Per-tree marginals, tree-local scope.
    pub m: Vec<TableSet>,
    /// Per-tree duals, same shape as `m`.
    pub lambda: Vec<TableSet>,
    /// Global consensus marginal, graph scope.
    pub mu: TableSet,
    /// Completed iterations.
    pub iter: usize,
    /// Running sums of `m` over iterations 0..iter (per tree).
    pub ergodic_m: Vec<TableSet>,
    /// Running sum of `mu` over iterations 0..iter.
    pub ergodic_mu: TableSet,
    pub best_assignment: Assignment,
    pub best_value: f64,
}

/// Per-iteration diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct Residuals {
    /// Max over trees and entries of the consensus gap `|m - mu|`.
    pub primal_residual_inf: f64,
    /// Local-polytope violation of the global marginal.
    pub max_violation: f64,
    /// `<mu, f>` in score sign.
    pub lp_objective: f64,
    /// Score of the rounded assignment.
    pub decoded_value: f64,
}

/// One recorded trace row.
#[derive(Clone, Copy, Debug)]
pub struct TraceRow {
    pub iter: usize,
    pub seconds: f64,
    pub lp_objective: f64,
    pub decoded_value: f64,
    pub max_violation: f64,
    pub primal_residual: f64,
    pub dual_bound: f64,
    pub ergodic_consensus: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxItersReached,
}

pub struct RunResult {
    pub state: SolverState,
    pub trace: Vec<TraceRow>,
    pub status: SolveStatus,
}

/// Per-tree scratch buffers reused across iterations.
struct TreeScratch {
    eta: TableSet,
    m_next: TableSet,
}

pub struct Solver<'a> {
    mrf: &'a PairwiseMRF,
    plan: DecompositionPlan,
    config: SolverConfig,
    effective_alpha: f64,
    schedules: Vec<TreeSchedule>,
    degrees: Vec<Vec<usize>>,
    state: SolverState,
    scratch: Vec<TreeScratch>,
    pool: Option<rayon::ThreadPool>,
}

/// Gradient of the negative Bethe entropy at one entry; tiny positive
/// entries are lifted to the clamp before the log.
#[inline]
fn grad_edge(p: f64) -> f64 {
    1.0 + p.max(ZERO_CLAMP).ln()
}

#[inline]
fn grad_node(p: f64, degree: usize) -> f64 {
    -((degree as f64) - 1.0) * (1.0 + p.max(ZERO_CLAMP).ln())
}

impl<'a> Solver<'a> {
    /// Validates the plan and configuration, splits the cost potentials
    /// across trees with the configured weight, and initializes the state:
    /// uniform marginals everywhere, zero duals, zeroed ergodic sums.
    pub fn new(
        mrf: &'a PairwiseMRF,
        plan: &DecompositionPlan,
        config: SolverConfig,
    ) -> Result<Self> {
        if !(config.alpha > 0.0 && config.beta > 0.0 && config.rho > 0.0) {
            return Err(Error::BadConfig(
                "alpha, beta and rho must be positive".into(),
            ));
        }
        if config.threads == 0 {
            return Err(Error::BadConfig("threads must be at least 1".into()));
        }
        if config.trace_every == 0 {
            return Err(Error::BadConfig("trace_every must be at least 1".into()));
        }
        let defects = validate_cover(plan, mrf);
        if !defects.is_empty() {
            return Err(Error::InvalidPlan(defects));
        }
        let cost = to_cost(mrf);
        let rhos = vec![config.rho; plan.num_trees()];
        let plan = crate::decomposition::split_potentials(&cost, plan, &rhos)?;
        let effective_alpha = if config.safe_alpha {
            let worst = plan
                .trees()
                .iter()
                .map(|t| crate::oracles::safe_alpha_for(t, config.beta))
                .fold(0.0_f64, f64::max);
            config.alpha.max(worst)
        } else {
            config.alpha
        };
        let schedules = plan
            .trees()
            .iter()
            .map(TreeSchedule::new)
            .collect::<Result<Vec<_>>>()?;
        let degrees = plan.trees().iter().map(|t| t.degrees()).collect();
        let m: Vec<TableSet> = plan.trees().iter().map(|t| t.uniform_marginals()).collect();
        let lambda: Vec<TableSet> = plan.trees().iter().map(|t| t.zero_tables()).collect();
        let mu = mrf.uniform_marginals();
        let ergodic_m = plan.trees().iter().map(|t| t.zero_tables()).collect();
        let ergodic_mu = mrf.zero_tables();
        let best_assignment = round_solution(&mu);
        let best_value = eval_assignment(mrf, &best_assignment)?;
        let scratch = plan
            .trees()
            .iter()
            .map(|t| TreeScratch {
                eta: t.zero_tables(),
                m_next: t.zero_tables(),
            })
            .collect();
        let pool = if config.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.threads)
                    .build()
                    .map_err(|e| Error::Thread(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Solver {
            mrf,
            plan,
            config,
            effective_alpha,
            schedules,
            degrees,
            state: SolverState {
                m,
                lambda,
                mu,
                iter: 0,
                ergodic_m,
                ergodic_mu,
                best_assignment,
                best_value,
            },
            scratch,
            pool,
        })
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn into_state(self) -> SolverState {
        self.state
    }

    pub fn plan(&self) -> &DecompositionPlan {
        &self.plan
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// The proximal weight actually used (raised under `safe_alpha`).
    pub fn effective_alpha(&self) -> f64 {
        self.effective_alpha
    }

    /// The proximal step for one tree: forms the linearization point
    /// `y = rho * theta + lambda + beta * (m - mu_restricted)`, moves to
    /// the parameters `grad phi(m) - y / alpha`, and returns their exact
    /// tree marginals.
    pub fn bethe_step_m(&self, tree_index: usize) -> Result<TableSet> {
        let tree = &self.plan.trees()[tree_index];
        let mut eta = tree.zero_tables();
        self.fill_eta(tree_index, &mut eta);
        let mut out = tree.zero_tables();
        sum_product_into(tree, &self.schedules[tree_index], &eta, &mut out)?;
        Ok(out)
    }

    fn fill_eta(&self, tree_index: usize, eta: &mut TableSet) {
        let tree = &self.plan.trees()[tree_index];
        let m = &self.state.m[tree_index];
        let lambda = &self.state.lambda[tree_index];
        let mu = &self.state.mu;
        let degrees = &self.degrees[tree_index];
        let inv_alpha = 1.0 / self.effective_alpha;
        let beta = self.config.beta;
        let rho = tree.rho();
        for (l, &g) in tree.nodes().iter().enumerate() {
            let d = degrees[l];
            for (x, dst) in eta.node[l].iter_mut().enumerate() {
                let mv = m.node[l][x];
                let y = rho * tree.theta.node[l][x] + lambda.node[l][x] + beta * (mv - mu.node[g][x]);
                *dst = grad_node(mv, d) - y * inv_alpha;
            }
        }
        for (l, &g) in tree.edges().iter().enumerate() {
            for (i, dst) in eta.edge[l].iter_mut().enumerate() {
                let mv = m.edge[l][i];
                let y = rho * tree.theta.edge[l][i] + lambda.edge[l][i] + beta * (mv - mu.edge[g][i]);
                *dst = grad_edge(mv) - y * inv_alpha;
            }
        }
    }

    /// One full iteration. Accumulates the ergodic sums of the current
    /// iterate, updates every tree, averages the consensus marginal in
    /// ascending tree order, moves the duals, and reports residuals of the
    /// new iterate.
    pub fn step(&mut self) -> Residuals {
        let Solver {
            mrf,
            plan,
            config,
            effective_alpha,
            schedules,
            degrees,
            state,
            scratch,
            pool,
        } = self;
        let pool: &Option<rayon::ThreadPool> = pool;
        let beta = config.beta;
        let inv_alpha = 1.0 / *effective_alpha;

        // Ergodic sums of the pre-update iterate.
        let run_trees = |f: &(dyn Fn(usize, &mut TreeScratch) + Sync), scratch: &mut Vec<TreeScratch>| {
            match pool {
                Some(p) => p.install(|| {
                    scratch
                        .par_iter_mut()
                        .enumerate()
                        .for_each(|(i, s)| f(i, s))
                }),
                None => scratch.iter_mut().enumerate().for_each(|(i, s)| f(i, s)),
            }
        };
        for (acc, m) in state.ergodic_m.iter_mut().zip(&state.m) {
            acc.add_assign(m);
        }
        state.ergodic_mu.add_assign(&state.mu);

        // Per-tree proximal updates into disjoint scratch buffers.
        {
            let m_all = &state.m;
            let lambda_all = &state.lambda;
            let mu = &state.mu;
            let trees = plan.trees();
            let step_one = |i: usize, s: &mut TreeScratch| {
                let tree = &trees[i];
                let m = &m_all[i];
                let lambda = &lambda_all[i];
                let degs = &degrees[i];
                let rho = tree.rho();
                for (l, &g) in tree.nodes().iter().enumerate() {
                    let d = degs[l];
                    for (x, dst) in s.eta.node[l].iter_mut().enumerate() {
                        let mv = m.node[l][x];
                        let y = rho * tree.theta.node[l][x]
                            + lambda.node[l][x]
                            + beta * (mv - mu.node[g][x]);
                        *dst = grad_node(mv, d) - y * inv_alpha;
                    }
                }
                for (l, &g) in tree.edges().iter().enumerate() {
                    for (idx, dst) in s.eta.edge[l].iter_mut().enumerate() {
                        let mv = m.edge[l][idx];
                        let y = rho * tree.theta.edge[l][idx]
                            + lambda.edge[l][idx]
                            + beta * (mv - mu.edge[g][idx]);
                        *dst = grad_edge(mv) - y * inv_alpha;
                    }
                }
                sum_product_into(tree, &schedules[i], &s.eta, &mut s.m_next)
                    .expect("interior iterates keep parameters finite");
            };
            run_trees(&step_one, scratch);
        }

        // Consensus average in ascending tree order per component.
        let trees = plan.trees();
        let average_nodes = |mu_node: &mut Vec<Vec<f64>>| {
            for (u, table) in mu_node.iter_mut().enumerate() {
                let members = plan.node_membership(u);
                let inv = 1.0 / members.len() as f64;
                for (x, dst) in table.iter_mut().enumerate() {
                    let mut sum = 0.0;
                    for &(t, l) in members {
                        sum += scratch[t].m_next.node[l][x];
                    }
                    *dst = sum * inv;
                }
            }
        };
        let average_edges = |mu_edge: &mut Vec<Vec<f64>>| {
            for (e, table) in mu_edge.iter_mut().enumerate() {
                let members = plan.edge_membership(e);
                let inv = 1.0 / members.len() as f64;
                for (i, dst) in table.iter_mut().enumerate() {
                    let mut sum = 0.0;
                    for &(t, l) in members {
                        sum += scratch[t].m_next.edge[l][i];
                    }
                    *dst = sum * inv;
                }
            }
        };
        average_nodes(&mut state.mu.node);
        average_edges(&mut state.mu.edge);

        // Dual ascent along the new consensus gap; preserves the zero-sum
        // property over each component's copies exactly up to rounding.
        {
            let mu = &state.mu;
            let scratch_ref: &Vec<TreeScratch> = scratch;
            let update_one = |i: usize, lambda: &mut TableSet| {
                let tree = &trees[i];
                let m_next = &scratch_ref[i].m_next;
                for (l, &g) in tree.nodes().iter().enumerate() {
                    for (x, dst) in lambda.node[l].iter_mut().enumerate() {
                        *dst += beta * (m_next.node[l][x] - mu.node[g][x]);
                    }
                }
                for (l, &g) in tree.edges().iter().enumerate() {
                    for (idx, dst) in lambda.edge[l].iter_mut().enumerate() {
                        *dst += beta * (m_next.edge[l][idx] - mu.edge[g][idx]);
                    }
                }
            };
            match pool {
                Some(p) => p.install(|| {
                    state
                        .lambda
                        .par_iter_mut()
                        .enumerate()
                        .for_each(|(i, l)| update_one(i, l))
                }),
                None => state
                    .lambda
                    .iter_mut()
                    .enumerate()
                    .for_each(|(i, l)| update_one(i, l)),
            }
        }

        for (m, s) in state.m.iter_mut().zip(scratch.iter_mut()) {
            std::mem::swap(m, &mut s.m_next);
        }
        state.iter += 1;

        // Residuals of the committed iterate.
        let gap_one = |i: usize| -> f64 {
            let tree = &trees[i];
            let m = &state.m[i];
            let mut worst: f64 = 0.0;
            for (l, &g) in tree.nodes().iter().enumerate() {
                for (x, &v) in m.node[l].iter().enumerate() {
                    worst = worst.max((v - state.mu.node[g][x]).abs());
                }
            }
            for (l, &g) in tree.edges().iter().enumerate() {
                for (idx, &v) in m.edge[l].iter().enumerate() {
                    worst = worst.max((v - state.mu.edge[g][idx]).abs());
                }
            }
            worst
        };
        let gaps: Vec<f64> = match pool {
            Some(p) => p.install(|| (0..trees.len()).into_par_iter().map(gap_one).collect()),
            None => (0..trees.len()).map(gap_one).collect(),
        };
        let primal_residual_inf = gaps.into_iter().fold(0.0_f64, f64::max);
        let max_violation = polytope_violation(&state.mu, mrf).expect("state matches model");
        let lp = lp_objective(&state.mu, mrf).expect("state matches model");
        let decoded = round_solution(&state.mu);
        let decoded_value = eval_assignment(mrf, &decoded).expect("rounded assignment is valid");
        if decoded_value > state.best_value {
            state.best_value = decoded_value;
            state.best_assignment = decoded;
        }
        Residuals {
            primal_residual_inf,
            max_violation,
            lp_objective: lp,
            decoded_value,
        }
    }

    /// Residuals of the current iterate, without stepping.
    pub fn residuals(&self) -> Residuals {
        let trees = self.plan.trees();
        let mut primal: f64 = 0.0;
        for (i, tree) in trees.iter().enumerate() {
            let m = &self.state.m[i];
            for (l, &g) in tree.nodes().iter().enumerate() {
                for (x, &v) in m.node[l].iter().enumerate() {
                    primal = primal.max((v - self.state.mu.node[g][x]).abs());
                }
            }
            for (l, &g) in tree.edges().iter().enumerate() {
                for (idx, &v) in m.edge[l].iter().enumerate() {
                    primal = primal.max((v - self.state.mu.edge[g][idx]).abs());
                }
            }
        }
        let decoded = round_solution(&self.state.mu);
        Residuals {
            primal_residual_inf: primal,
            max_violation: polytope_violation(&self.state.mu, self.mrf).unwrap(),
            lp_objective: lp_objective(&self.state.mu, self.mrf).unwrap(),
            decoded_value: eval_assignment(self.mrf, &decoded).unwrap(),
        }
    }

    /// Worst absolute copy-sum of the duals over all components: exactly
    /// zero in exact arithmetic, bounded by rounding drift in practice.
    pub fn max_dual_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for u in 0..self.mrf.num_nodes() {
            let members = self.plan.node_membership(u);
            for x in 0..self.mrf.cardinality(u) {
                let sum: f64 = members
                    .iter()
                    .map(|&(t, l)| self.state.lambda[t].node[l][x])
                    .sum();
                worst = worst.max(sum.abs());
            }
        }
        for e in 0..self.mrf.num_edges() {
            let members = self.plan.edge_membership(e);
            let (u, v) = self.mrf.edges()[e];
            for i in 0..self.mrf.cardinality(u) * self.mrf.cardinality(v) {
                let sum: f64 = members
                    .iter()
                    .map(|&(t, l)| self.state.lambda[t].edge[l][i])
                    .sum();
                worst = worst.max(sum.abs());
            }
        }
        worst
    }

    /// Certified bound on the relaxed optimum, in score sign: an upper
    /// bound on `max over feasible mu of <mu, f>`. Each tree's term is the
    /// exact minimum of `<m, rho * theta + lambda>` over the tree's
    /// polytope, attained at an integral assignment and solved by
    /// max-product on the negated scores. Valid whenever the dual copies
    /// sum to zero; if drift exceeds 1e-6 the copies are mean-centered
    /// first.
    pub fn dual_bound(&self) -> f64 {
        let centered;
        let lambdas: &[TableSet] = if self.max_dual_asymmetry() > 1e-6 {
            centered = self.mean_centered_duals();
            &centered
        } else {
            &self.state.lambda
        };
        let trees = self.plan.trees();
        let term = |i: usize| -> f64 {
            let tree = &trees[i];
            let rho = tree.rho();
            let mut scores = tree.zero_tables();
            for (l, t) in scores.node.iter_mut().enumerate() {
                for (x, dst) in t.iter_mut().enumerate() {
                    *dst = -(rho * tree.theta.node[l][x] + lambdas[i].node[l][x]);
                }
            }
            for (l, t) in scores.edge.iter_mut().enumerate() {
                for (idx, dst) in t.iter_mut().enumerate() {
                    *dst = -(rho * tree.theta.edge[l][idx] + lambdas[i].edge[l][idx]);
                }
            }
            max_product_into(tree, &self.schedules[i], &scores)
                .expect("scores are finite on a valid tree")
                .1
        };
        let terms: Vec<f64> = match &self.pool {
            Some(p) => p.install(|| (0..trees.len()).into_par_iter().map(term).collect()),
            None => (0..trees.len()).map(term).collect(),
        };
        terms.into_iter().sum()
    }

    fn mean_centered_duals(&self) -> Vec<TableSet> {
        let mut out = self.state.lambda.clone();
        for u in 0..self.mrf.num_nodes() {
            let members = self.plan.node_membership(u);
            let inv = 1.0 / members.len() as f64;
            for x in 0..self.mrf.cardinality(u) {
                let mean: f64 = members
                    .iter()
                    .map(|&(t, l)| self.state.lambda[t].node[l][x])
                    .sum::<f64>()
                    * inv;
                for &(t, l) in members {
                    out[t].node[l][x] -= mean;
                }
            }
        }
        for e in 0..self.mrf.num_edges() {
            let members = self.plan.edge_membership(e);
            let (u, v) = self.mrf.edges()[e];
            let inv = 1.0 / members.len() as f64;
            for i in 0..self.mrf.cardinality(u) * self.mrf.cardinality(v) {
                let mean: f64 = members
                    .iter()
                    .map(|&(t, l)| self.state.lambda[t].edge[l][i])
                    .sum::<f64>()
                    * inv;
                for &(t, l) in members {
                    out[t].edge[l][i] -= mean;
                }
            }
        }
        out
    }

    /// Consensus defect of the ergodic averages:
    /// `sum over trees of || mean(m) - mean(mu restricted) ||^2`.
    pub fn ergodic_consensus(&self) -> f64 {
        if self.state.iter == 0 {
            return 0.0;
        }
        let inv_t = 1.0 / self.state.iter as f64;
        let mut total = 0.0;
        for (i, tree) in self.plan.trees().iter().enumerate() {
            let acc = &self.state.ergodic_m[i];
            for (l, &g) in tree.nodes().iter().enumerate() {
                for (x, &v) in acc.node[l].iter().enumerate() {
                    let d = (v - self.state.ergodic_mu.node[g][x]) * inv_t;
                    total += d * d;
                }
            }
            for (l, &g) in tree.edges().iter().enumerate() {
                for (idx, &v) in acc.edge[l].iter().enumerate() {
                    let d = (v - self.state.ergodic_mu.edge[g][idx]) * inv_t;
                    total += d * d;
                }
            }
        }
        total
    }
}

/// Average the copies of every component of per-tree tables into a
/// graph-scope table set, summing in ascending tree order.
pub fn consensus_average(
    plan: &DecompositionPlan,
    per_tree: &[TableSet],
    mrf: &PairwiseMRF,
) -> TableSet {
    let mut mu = mrf.zero_tables();
    for (u, table) in mu.node.iter_mut().enumerate() {
        let members = plan.node_membership(u);
        let inv = 1.0 / members.len() as f64;
        for (x, dst) in table.iter_mut().enumerate() {
            let mut sum = 0.0;
            for &(t, l) in members {
                sum += per_tree[t].node[l][x];
            }
            *dst = sum * inv;
        }
    }
    for (e, table) in mu.edge.iter_mut().enumerate() {
        let members = plan.edge_membership(e);
        let inv = 1.0 / members.len() as f64;
        for (i, dst) in table.iter_mut().enumerate() {
            let mut sum = 0.0;
            for &(t, l) in members {
                sum += per_tree[t].edge[l][i];
            }
            *dst = sum * inv;
        }
    }
    mu
}

/// Runs the full iteration to the stopping rule
/// `max(primal residual, violation) < tol` or the iteration cap, recording
/// a trace row every `trace_every` iterations and at the final iteration.
pub fn run(mrf: &PairwiseMRF, plan: &DecompositionPlan, config: &SolverConfig) -> Result<RunResult> {
    let mut solver = Solver::new(mrf, plan, config.clone())?;
    let start = Instant::now();
    let mut trace = Vec::new();
    let mut status = SolveStatus::MaxItersReached;
    for _ in 0..config.max_iters {
        let r = solver.step();
        let iter = solver.state().iter;
        let stop = r.primal_residual_inf.max(r.max_violation) < config.tol;
        if stop || iter % config.trace_every == 0 || iter == config.max_iters {
            trace.push(TraceRow {
                iter,
                seconds: start.elapsed().as_secs_f64(),
                lp_objective: r.lp_objective,
                decoded_value: r.decoded_value,
                max_violation: r.max_violation,
                primal_residual: r.primal_residual_inf,
                dual_bound: solver.dual_bound(),
                ergodic_consensus: solver.ergodic_consensus(),
            });
        }
        if stop {
            status = SolveStatus::Converged;
            break;
        }
    }
    Ok(RunResult {
        state: solver.into_state(),
        trace,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{potts_grid3d, random_tree_mrf};
    use crate::decomposition::{edge_decomposition, tree_cover};
    use crate::oracles::brute_force_map;

    fn zero_mrf(n: usize, edges: Vec<(usize, usize)>) -> PairwiseMRF {
        let e = edges
            .iter()
            .map(|_| vec![0.0; 4])
            .collect();
        PairwiseMRF::new(vec![2; n], edges, vec![vec![0.0; 2]; n], e).unwrap()
    }

    #[test]
    fn init_state_is_uniform_feasible_zero_sum() {
        let m = zero_mrf(3, vec![(0, 1), (0, 2), (1, 2)]);
        let plan = edge_decomposition(&m).unwrap();
        let solver = Solver::new(&m, &plan, SolverConfig::default()).unwrap();
        let state = solver.state();
        for t in &state.m {
            for table in &t.node {
                assert!(table.iter().all(|&x| x == 0.5));
            }
            for table in &t.edge {
                assert!(table.iter().all(|&x| x == 0.25));
            }
        }
        assert_eq!(polytope_violation(&state.mu, &m).unwrap(), 0.0);
        assert_eq!(solver.max_dual_asymmetry(), 0.0);
        assert_eq!(state.iter, 0);
        let r = solver.residuals();
        assert_eq!(r.primal_residual_inf, 0.0);
        assert_eq!(r.max_violation, 0.0);
    }

    #[test]
    fn zero_potentials_stop_immediately() {
        let m = zero_mrf(3, vec![(0, 1), (0, 2), (1, 2)]);
        let plan = edge_decomposition(&m).unwrap();
        let result = run(&m, &plan, &SolverConfig::default()).unwrap();
        assert_eq!(result.status, SolveStatus::Converged);
        assert_eq!(result.state.iter, 1);
        let last = result.trace.last().unwrap();
        assert_eq!(last.primal_residual, 0.0);
        assert_eq!(last.max_violation, 0.0);
        assert_eq!(last.lp_objective, 0.0);
    }

    #[test]
    fn bethe_step_fixed_point_at_uniform() {
        let m = zero_mrf(4, vec![(0, 1), (1, 2), (2, 3)]);
        let plan = edge_decomposition(&m).unwrap();
        let solver = Solver::new(&m, &plan, SolverConfig::default()).unwrap();
        for i in 0..plan.num_trees() {
            let next = solver.bethe_step_m(i).unwrap();
            assert!(next.max_abs_diff(&solver.state().m[i]) < 1e-12);
        }
    }

    #[test]
    fn bethe_step_moves_toward_lower_cost() {
        // Single-edge tree with a unary pull toward label 0; one proximal
        // step from uniform must tilt node 0 toward label 0, and the tilt
        // shrinks as alpha grows.
        let m = PairwiseMRF::new(
            vec![2, 2],
            vec![(0, 1)],
            vec![vec![1.0, 0.0], vec![0.0, 0.0]],
            vec![vec![0.0; 4]],
        )
        .unwrap();
        let plan = edge_decomposition(&m).unwrap();
        let mut tilt = Vec::new();
        for alpha in [2.0, 20.0] {
            let config = SolverConfig {
                alpha,
                ..SolverConfig::default()
            };
            let solver = Solver::new(&m, &plan, config).unwrap();
            let next = solver.bethe_step_m(0).unwrap();
            assert!(next.node[0][0] > 0.5, "alpha {alpha}: {:?}", next.node[0]);
            assert!(crate::tree::tree_violation(&plan.trees()[0], &next).unwrap() < 1e-9);
            tilt.push(next.node[0][0] - 0.5);
        }
        assert!(tilt[0] > tilt[1]);
    }

    #[test]
    fn bethe_step_matches_direct_maximization() {
        // The step solves: maximize <m, eta> + H_Bethe(m) over the edge
        // polytope with eta = grad phi(m) - y / alpha. A dense sweep over
        // edge distributions of the 2x2 polytope confirms the maximizer.
        let m = PairwiseMRF::new(
            vec![2, 2],
            vec![(0, 1)],
            vec![vec![1.0, 0.0], vec![0.0, 0.0]],
            vec![vec![0.5, 0.0, 0.0, 0.0]],
        )
        .unwrap();
        let plan = edge_decomposition(&m).unwrap();
        let solver = Solver::new(&m, &plan, SolverConfig { alpha: 0.7, ..Default::default() }).unwrap();
        let tree = &plan.trees()[0];
        let mut eta = tree.zero_tables();
        solver.fill_eta(0, &mut eta);
        let next = solver.bethe_step_m(0).unwrap();
        let objective = |edge: &[f64; 4]| -> f64 {
            let node0 = [edge[0] + edge[1], edge[2] + edge[3]];
            let node1 = [edge[0] + edge[2], edge[1] + edge[3]];
            let cand = TableSet {
                node: vec![node0.to_vec(), node1.to_vec()],
                edge: vec![edge.to_vec()],
            };
            cand.dot(&eta) + crate::tree::bethe_entropy(tree, &cand).unwrap()
        };
        let best = {
            let e = &next.edge[0];
            objective(&[e[0], e[1], e[2], e[3]])
        };
        // Grid over the 3-simplex of edge distributions.
        let steps = 60;
        for i in 0..=steps {
            for j in 0..=steps - i {
                for k in 0..=steps - i - j {
                    let l = steps - i - j - k;
                    let cand = [
                        i as f64 / steps as f64,
                        j as f64 / steps as f64,
                        k as f64 / steps as f64,
                        l as f64 / steps as f64,
                    ];
                    if cand.iter().any(|&x| x == 0.0) {
                        continue;
                    }
                    assert!(objective(&cand) <= best + 1e-9);
                }
            }
        }
    }

    #[test]
    fn consensus_average_examples() {
        let m = zero_mrf(3, vec![(0, 1), (1, 2)]);
        let plan = edge_decomposition(&m).unwrap();
        let mut per_tree: Vec<TableSet> =
            plan.trees().iter().map(|t| t.uniform_marginals()).collect();
        // Node 1 lives in both trees at local index 1 and 0 respectively.
        per_tree[0].node[1] = vec![0.6, 0.4];
        per_tree[1].node[0] = vec![0.8, 0.2];
        let mu = consensus_average(&plan, &per_tree, &m);
        assert_eq!(mu.node[1], vec![0.7, 0.30000000000000004]);
        // Node 0 has a single copy; it passes through unchanged.
        assert_eq!(mu.node[0], per_tree[0].node[0]);
    }

    #[test]
    fn lambda_step_and_zero_sum() {
        let m = random_tree_mrf(5, 2, 1.0, 3).unwrap();
        let plan = edge_decomposition(&m).unwrap();
        let mut solver = Solver::new(&m, &plan, SolverConfig::default()).unwrap();
        let before_m = solver.state().m.clone();
        solver.step();
        let state = solver.state();
        let beta = solver.config().beta;
        // lambda was zero, so after one step lambda = beta * (m - mu).
        for (i, tree) in plan.trees().iter().enumerate() {
            for (l, &g) in tree.nodes().iter().enumerate() {
                for x in 0..2 {
                    let expected = beta * (state.m[i].node[l][x] - state.mu.node[g][x]);
                    assert!((state.lambda[i].node[l][x] - expected).abs() < 1e-15);
                }
            }
        }
        assert!(solver.max_dual_asymmetry() < 1e-15);
        assert!(before_m != state.m, "one step must move the marginals");
    }

    #[test]
    fn single_tree_plan_immediate_consensus() {
        let m = random_tree_mrf(6, 3, 1.0, 8).unwrap();
        let plan = tree_cover(&m, 0).unwrap();
        assert_eq!(plan.num_trees(), 1);
        let mut solver = Solver::new(&m, &plan, SolverConfig::default()).unwrap();
        for _ in 0..3 {
            let r = solver.step();
            assert_eq!(r.primal_residual_inf, 0.0);
        }
    }

    #[test]
    fn dual_bound_single_tree_equals_map() {
        let m = random_tree_mrf(7, 3, 1.0, 12).unwrap();
        let plan = tree_cover(&m, 0).unwrap();
        let solver = Solver::new(&m, &plan, SolverConfig::default()).unwrap();
        let (_, map_value) = brute_force_map(&m).unwrap();
        assert_eq!(solver.dual_bound(), map_value);
    }

    #[test]
    fn dual_bound_dominates_feasible_points_on_frustrated_triangle() {
        // All couplings repulsive: the relaxed optimum is the half-integral
        // point, strictly above every integral assignment. The bound must
        // stay above the best verified-feasible candidate at every
        // iteration.
        let w = -1.0;
        let potts = vec![w, 0.0, 0.0, w];
        let m = PairwiseMRF::new(
            vec![2, 2, 2],
            vec![(0, 1), (0, 2), (1, 2)],
            vec![vec![0.1, 0.0], vec![0.0, 0.05], vec![0.02, 0.0]],
            vec![potts.clone(), potts.clone(), potts],
        )
        .unwrap();
        let plan = edge_decomposition(&m).unwrap();

        // Candidate vertices: all integral assignments plus half-integral
        // points (uniform nodes, permutation-halved edges), filtered by
        // actual feasibility.
        let mut candidates = Vec::new();
        for bits in 0..8u32 {
            let labels: Vec<usize> = (0..3).map(|u| ((bits >> u) & 1) as usize).collect();
            let mut mu = m.zero_tables();
            for (u, &x) in labels.iter().enumerate() {
                mu.node[u][x] = 1.0;
            }
            for (e, &(u, v)) in m.edges().iter().enumerate() {
                mu.edge[e][labels[u] * 2 + labels[v]] = 1.0;
            }
            candidates.push(mu);
        }
        for pattern in 0..8u32 {
            let mut mu = m.uniform_marginals();
            for e in 0..3 {
                mu.edge[e] = if (pattern >> e) & 1 == 0 {
                    vec![0.5, 0.0, 0.0, 0.5]
                } else {
                    vec![0.0, 0.5, 0.5, 0.0]
                };
            }
            candidates.push(mu);
        }
        let best_feasible = candidates
            .iter()
            .filter(|mu| polytope_violation(mu, &m).unwrap() < 1e-12)
            .map(|mu| lp_objective(mu, &m).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);

        let mut solver = Solver::new(&m, &plan, SolverConfig::default()).unwrap();
        for _ in 0..200 {
            solver.step();
            assert!(solver.dual_bound() >= best_feasible - 1e-9);
        }
        // Strong duality on this instance: the bound approaches the
        // fractional optimum, not the integral one.
        let (_, integral) = brute_force_map(&m).unwrap();
        assert!(best_feasible > integral);
        assert!(solver.dual_bound() - best_feasible < 0.05);
    }

    #[test]
    fn attractive_triangle_decodes_ground_state() {
        let potts = vec![0.8, 0.0, 0.0, 0.8];
        let m = PairwiseMRF::new(
            vec![2, 2, 2],
            vec![(0, 1), (0, 2), (1, 2)],
            vec![vec![0.3, 0.0], vec![0.1, 0.0], vec![0.0, 0.05]],
            vec![potts.clone(), potts.clone(), potts],
        )
        .unwrap();
        let plan = edge_decomposition(&m).unwrap();
        let result = run(&m, &plan, &SolverConfig::default()).unwrap();
        let (map, map_value) = brute_force_map(&m).unwrap();
        assert_eq!(result.state.best_value, map_value);
        assert_eq!(result.state.best_assignment.labels(), map.labels());
        let first = map.labels()[0];
        assert!(map.labels().iter().all(|&x| x == first));
    }

    #[test]
    fn tree_instances_recover_map() {
        for seed in [1, 2, 3] {
            let m = random_tree_mrf(8, 3, 1.0, seed).unwrap();
            let plan = edge_decomposition(&m).unwrap();
            let config = SolverConfig {
                max_iters: 5000,
                ..SolverConfig::default()
            };
            let result = run(&m, &plan, &config).unwrap();
            assert_eq!(result.status, SolveStatus::Converged, "seed {seed}");
            let (_, map_value) = brute_force_map(&m).unwrap();
            assert_eq!(result.state.best_value, map_value, "seed {seed}");
        }
    }

    #[test]
    fn dual_bound_tight_at_convergence_on_trees() {
        let m = random_tree_mrf(7, 3, 1.0, 21).unwrap();
        let plan = edge_decomposition(&m).unwrap();
        let mut solver = Solver::new(&m, &plan, SolverConfig::default()).unwrap();
        let mut last = None;
        for _ in 0..3000 {
            last = Some(solver.step());
        }
        let gap = (solver.dual_bound() - last.unwrap().lp_objective).abs();
        assert!(gap < 1e-6, "gap {gap:.3e}");
    }

    #[test]
    fn safe_alpha_raises_effective_weight() {
        let m = zero_mrf(3, vec![(0, 1), (1, 2)]);
        let plan = edge_decomposition(&m).unwrap();
        let config = SolverConfig {
            alpha: 0.05,
            beta: 0.05,
            safe_alpha: true,
            ..SolverConfig::default()
        };
        let solver = Solver::new(&m, &plan, config).unwrap();
        // Two-node trees: beta * (2*2 - 1)^2 = 0.45.
        assert!((solver.effective_alpha() - 0.45).abs() < 1e-15);
        for tree in plan.trees() {
            assert!(solver.effective_alpha() >= crate::oracles::safe_alpha_for(tree, 0.05));
        }
    }

    #[test]
    fn traces_identical_across_thread_counts() {
        let m = potts_grid3d(2, 2, 3, 3, 1.0, 41).unwrap();
        let plan = edge_decomposition(&m).unwrap();
        let base = SolverConfig {
            max_iters: 60,
            tol: 0.0,
            trace_every: 5,
            ..SolverConfig::default()
        };
        let reference = run(&m, &plan, &base).unwrap();
        for threads in [2, 4] {
            let config = SolverConfig {
                threads,
                ..base.clone()
            };
            let result = run(&m, &plan, &config).unwrap();
            assert_eq!(result.trace.len(), reference.trace.len());
            for (a, b) in result.trace.iter().zip(&reference.trace) {
                assert_eq!(a.iter, b.iter);
                assert_eq!(a.lp_objective.to_bits(), b.lp_objective.to_bits());
                assert_eq!(a.decoded_value.to_bits(), b.decoded_value.to_bits());
                assert_eq!(a.max_violation.to_bits(), b.max_violation.to_bits());
                assert_eq!(a.primal_residual.to_bits(), b.primal_residual.to_bits());
                assert_eq!(a.dual_bound.to_bits(), b.dual_bound.to_bits());
                assert_eq!(
                    a.ergodic_consensus.to_bits(),
                    b.ergodic_consensus.to_bits()
                );
            }
        }
    }

    #[test]
    fn tree_marginals_stay_feasible_and_positive() {
        let m = potts_grid3d(2, 2, 2, 2, 1.0, 55).unwrap();
        let plan = edge_decomposition(&m).unwrap();
        let mut solver = Solver::new(&m, &plan, SolverConfig::default()).unwrap();
        for _ in 0..50 {
            solver.step();
            for (i, tree) in plan.trees().iter().enumerate() {
                let v = crate::tree::tree_violation(tree, &solver.state().m[i]).unwrap();
                assert!(v < 1e-8);
                assert!(solver.state().m[i].entries().all(|x| x > 0.0));
            }
            assert!(solver.max_dual_asymmetry() < 1e-8);
        }
    }

    #[test]
    fn run_flags_iteration_cap() {
        let m = potts_grid3d(2, 2, 2, 2, 1.0, 77).unwrap();
        let plan = edge_decomposition(&m).unwrap();
        let config = SolverConfig {
            max_iters: 3,
            tol: 1e-12,
            trace_every: 1,
            ..SolverConfig::default()
        };
        let result = run(&m, &plan, &config).unwrap();
        assert_eq!(result.status, SolveStatus::MaxItersReached);
        assert_eq!(result.trace.len(), 3);
        assert!(result.trace.windows(2).all(|w| w[0].iter < w[1].iter));
    }
}
