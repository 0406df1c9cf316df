use thiserror::Error;

/// Errors produced by model construction, inference kernels, the solver and IO.
#[derive(Debug, Error)]
pub enum Error {
    #[error("node {node}: cardinality {card} is below the minimum of 2")]
    CardinalityTooSmall { node: usize, card: usize },

    #[error("node {node} is out of range (model has {num_nodes} nodes)")]
    NodeOutOfRange { node: usize, num_nodes: usize },

    #[error("edge ({u}, {v}) is not in canonical orientation (expected u < v)")]
    NonCanonicalEdge { u: usize, v: usize },

    #[error("edge ({u}, {v}) appears more than once")]
    DuplicateEdge { u: usize, v: usize },

    #[error("self-loop at node {node}")]
    SelfLoop { node: usize },

    #[error("{what} for node {node}: expected {expected} entries, got {got}")]
    NodeTableShape {
        what: &'static str,
        node: usize,
        expected: usize,
        got: usize,
    },

    #[error("{what} for edge {edge}: expected {expected} entries, got {got}")]
    EdgeTableShape {
        what: &'static str,
        edge: usize,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {what} at node {node}")]
    NonFiniteNode { what: &'static str, node: usize },

    #[error("non-finite value in {what} at edge {edge}")]
    NonFiniteEdge { what: &'static str, edge: usize },

    #[error("assignment length {got} does not match the model's {expected} nodes")]
    AssignmentLength { expected: usize, got: usize },

    #[error("label {label} for node {node} exceeds its cardinality {card}")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        card: usize,
    },

    #[error("subgraph {tree} is not a tree: {reason}")]
    NotATree { tree: usize, reason: String },

    #[error("tree weight rho must be positive, got {rho}")]
    NonPositiveRho { rho: f64 },

    #[error("graph has no edges; decomposition is undefined")]
    EdgelessGraph,

    #[error("{component} has zero total replication weight; the cover does not include it")]
    UncoveredComponent { component: String },

    #[error("decomposition plan is invalid: {}", format_defects(.0))]
    InvalidPlan(Vec<crate::decomposition::CoverDefect>),

    #[error("marginal entry at {where_} is not positive after clamping")]
    NonPositiveMarginal { where_: String },

    #[error("negative marginal entry at {where_}")]
    NegativeMarginal { where_: String },

    #[error("marginals are not locally consistent on the tree (violation {violation:.3e})")]
    InconsistentMarginals { violation: f64 },

    #[error("state space of {size:.3e} assignments exceeds the enumeration guard of {guard:.1e}")]
    StateSpaceTooLarge { size: f64, guard: f64 },

    #[error("cross sample count n = {n} exceeds tree size s = {s}")]
    CrossSampleTooLarge { n: usize, s: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("thread pool: {0}")]
    Thread(String),

    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
