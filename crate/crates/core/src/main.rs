//! Batch CLI: instance generation, solving, brute-force oracles, and
//! assignment scoring.

use bethe_admm::solver::{run, SolveStatus, SolverConfig};
use bethe_admm::{
    datagen, decomposition, eval_assignment, io, oracles, Error, PairwiseMRF,
};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bethe-admm", version, about = "MAP inference on pairwise MRFs via tree-decomposed consensus ADMM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance.
    Gen {
        #[command(subcommand)]
        family: GenFamily,
    },
    /// Solve a model and write the decoded assignment.
    Solve(SolveArgs),
    /// Exact MAP by enumeration (guarded to small instances).
    Oracle { model: PathBuf },
    /// Score an assignment file against a model.
    Eval { model: PathBuf, assignment: PathBuf },
}

#[derive(Subcommand)]
enum GenFamily {
    /// 3-D grid with Potts couplings.
    Potts3d {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        t: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Trees joined by random cross edges, plus their natural tree cover.
    Treecross {
        /// Number of trees.
        #[arg(long)]
        trees: usize,
        /// Nodes per tree.
        #[arg(long)]
        size: usize,
        /// Cross edges per ordered tree pair.
        #[arg(long)]
        cross: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
        /// Where to write the generated decomposition plan.
        #[arg(long)]
        plan: PathBuf,
    },
}

#[derive(Args)]
struct SolveArgs {
    model: PathBuf,
    /// `edge`, `cover`, or a plan file path.
    #[arg(long, default_value = "edge")]
    decomp: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Raise the proximal weight to the step-size threshold of the widest
    /// tree.
    #[arg(long, default_value_t = false)]
    safe_alpha: bool,
    #[arg(long, default_value_t = 10)]
    trace_every: usize,
    /// Seed for the `cover` decomposition.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write per-iteration trace rows as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the best decoded assignment, one label per line.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn build_plan(
    mrf: &PairwiseMRF,
    decomp: &str,
    seed: u64,
) -> Result<decomposition::DecompositionPlan, Error> {
    match decomp {
        "edge" => decomposition::edge_decomposition(mrf),
        "cover" => decomposition::tree_cover(mrf, seed),
        path => io::read_plan(path, mrf),
    }
}

fn solve(args: &SolveArgs) -> Result<SolveStatus, Error> {
    let mrf = io::read_model(&args.model)?;
    let plan = build_plan(&mrf, &args.decomp, args.seed)?;
    let config = SolverConfig {
        alpha: args.alpha,
        beta: args.beta,
        rho: args.rho,
        max_iters: args.max_iters,
        tol: args.tol,
        threads: args.threads,
        safe_alpha: args.safe_alpha,
        trace_every: args.trace_every,
    };
    let result = run(&mrf, &plan, &config)?;
    if let Some(path) = &args.trace {
        io::write_trace(&result.trace, path)?;
    }
    if let Some(path) = &args.out {
        io::write_assignment(&result.state.best_assignment, path)?;
    }
    let last = result.trace.last();
    println!(
        "status: {}",
        match result.status {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxItersReached => "max_iters_reached",
        }
    );
    println!("iterations: {}", result.state.iter);
    println!("trees: {}", plan.num_trees());
    if let Some(row) = last {
        println!("lp_objective: {:.12}", row.lp_objective);
        println!("dual_bound: {:.12}", row.dual_bound);
        println!("max_violation: {:.3e}", row.max_violation);
        println!("primal_residual: {:.3e}", row.primal_residual);
    }
    println!("decoded_value: {:.12}", result.state.best_value);
    Ok(result.status)
}

fn main_inner() -> Result<SolveStatus, Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Gen { family } => {
            match family {
                GenFamily::Potts3d { m, n, t, k, a, seed, out } => {
                    let mrf = datagen::potts_grid3d(m, n, t, k, a, seed)?;
                    io::write_model(&mrf, &out)?;
                    println!("wrote {} nodes, {} edges to {}", mrf.num_nodes(), mrf.num_edges(), out.display());
                }
                GenFamily::Treecross { trees, size, cross, k, a, seed, out, plan } => {
                    let (mrf, cover) = datagen::tree_cross_graph(trees, size, cross, k, a, seed)?;
                    io::write_model(&mrf, &out)?;
                    io::write_plan(&cover, &plan)?;
                    println!(
                        "wrote {} nodes, {} edges to {}; plan with {} trees to {}",
                        mrf.num_nodes(),
                        mrf.num_edges(),
                        out.display(),
                        cover.num_trees(),
                        plan.display()
                    );
                }
            }
            Ok(SolveStatus::Converged)
        }
        Command::Solve(args) => solve(&args),
        Command::Oracle { model } => {
            let mrf = io::read_model(&model)?;
            let (assignment, value) = oracles::brute_force_map(&mrf)?;
            println!("value: {value:.12}");
            println!(
                "assignment: {}",
                assignment
                    .labels()
                    .iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            );
            Ok(SolveStatus::Converged)
        }
        Command::Eval { model, assignment } => {
            let mrf = io::read_model(&model)?;
            let x = io::read_assignment(&assignment)?;
            println!("score: {:.12}", eval_assignment(&mrf, &x)?);
            Ok(SolveStatus::Converged)
        }
    }
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(SolveStatus::Converged) => ExitCode::SUCCESS,
        Ok(SolveStatus::MaxItersReached) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
