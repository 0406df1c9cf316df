//! Approximate MAP inference for pairwise Markov random fields.
//!
//! The relaxed problem maximizes `<mu, f>` over the local polytope. It is
//! split across a cover of tree subgraphs coordinated by consensus ADMM:
//! each iteration solves every tree's subproblem exactly by sum-product
//! (the proximal term is the Bregman divergence of the tree's Bethe
//! entropy, so the subproblem is a reparametrized marginalization),
//! averages the shared components, and updates the duals. Tree subproblems
//! are independent and run in parallel deterministically.
//!
//! The crate also ships exact tree kernels, brute-force oracles for
//! verification, synthetic instance generators, and text file formats with
//! a batch CLI.

pub mod datagen;
pub mod decomposition;
pub mod error;
pub mod io;
pub mod mrf;
pub mod oracles;
pub mod solver;
pub mod tree;

pub use decomposition::{
    edge_decomposition, split_potentials, tree_cover, validate_cover, CoverDefect,
    DecompositionPlan, TreeSubgraph,
};
pub use error::{Error, Result};
pub use mrf::{
    eval_assignment, lp_objective, polytope_violation, round_solution, to_cost, Assignment,
    PairwiseMRF, Pseudomarginal, TableSet,
};
pub use solver::{run, RunResult, SolveStatus, Solver, SolverConfig, SolverState, TraceRow};
pub use tree::{
    bethe_divergence, bethe_entropy, bethe_gradient, max_product_map, sum_product_marginals,
    TreeParameters, TreeSchedule,
};
