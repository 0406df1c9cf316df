//! Line-based, whitespace-delimited file formats for models, decomposition
//! plans, assignments, and trace CSVs. Model and plan round-trips are
//! bitwise identities; floats are written in shortest round-trip form.
//! UAI "MARKOV" files with unary and pairwise tables are read by taking
//! natural logs of the product-form entries.

use crate::decomposition::{DecompositionPlan, TreeSubgraph};
use crate::error::{Error, Result};
use crate::mrf::{Assignment, PairwiseMRF};
use crate::solver::TraceRow;
use std::fmt::Write as _;
use std::path::Path;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Cursor over the lines of a text file, tracking 1-based line numbers and
/// skipping blank lines.
struct Lines<'a> {
    path: &'a Path,
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        Lines { path, lines, pos: 0 }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        if self.pos < self.lines.len() {
            let item = self.lines[self.pos];
            self.pos += 1;
            Ok(item)
        } else {
            let last = self.lines.last().map_or(0, |&(n, _)| n);
            Err(parse_err(
                self.path,
                last + 1,
                format!("unexpected end of file, expected {what}"),
            ))
        }
    }

    fn parse_one<T: std::str::FromStr>(&mut self, what: &str) -> Result<(usize, T)> {
        let (line, text) = self.next(what)?;
        let mut fields = text.split_whitespace();
        let first = fields
            .next()
            .ok_or_else(|| parse_err(self.path, line, format!("expected {what}")))?;
        if fields.next().is_some() {
            return Err(parse_err(
                self.path,
                line,
                format!("expected a single value for {what}"),
            ));
        }
        let value = first
            .parse::<T>()
            .map_err(|_| parse_err(self.path, line, format!("cannot parse `{first}` as {what}")))?;
        Ok((line, value))
    }

    fn parse_vec<T: std::str::FromStr>(
        &mut self,
        what: &str,
        expected: usize,
    ) -> Result<(usize, Vec<T>)> {
        let (line, text) = self.next(what)?;
        let mut out = Vec::with_capacity(expected);
        for field in text.split_whitespace() {
            let value = field.parse::<T>().map_err(|_| {
                parse_err(self.path, line, format!("cannot parse `{field}` in {what}"))
            })?;
            out.push(value);
        }
        if out.len() != expected {
            return Err(parse_err(
                self.path,
                line,
                format!("{what}: expected {expected} values, got {}", out.len()),
            ));
        }
        Ok((line, out))
    }
}

fn join<T: std::fmt::Display>(values: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
    out
}

/// Native model serialization.
pub fn model_to_string(mrf: &PairwiseMRF) -> String {
    let mut out = String::from("PMRF\n");
    let _ = writeln!(out, "{}", mrf.num_nodes());
    let _ = writeln!(out, "{}", join(mrf.cardinalities().iter()));
    let _ = writeln!(out, "{}", mrf.num_edges());
    for &(u, v) in mrf.edges() {
        let _ = writeln!(out, "{u} {v}");
    }
    for u in 0..mrf.num_nodes() {
        let _ = writeln!(out, "{}", join(mrf.node_potential(u).iter()));
    }
    for e in 0..mrf.num_edges() {
        let _ = writeln!(out, "{}", join(mrf.edge_potential(e).iter()));
    }
    out
}

pub fn write_model(mrf: &PairwiseMRF, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_string(mrf)).map_err(|e| io_err(path, e))
}

fn read_native_model(path: &Path, text: &str) -> Result<PairwiseMRF> {
    let mut lines = Lines::new(path, text);
    let (line, header) = lines.next("PMRF header")?;
    if header != "PMRF" {
        return Err(parse_err(path, line, format!("bad header `{header}`")));
    }
    let (_, num_nodes) = lines.parse_one::<usize>("node count")?;
    let (_, cards) = lines.parse_vec::<usize>("cardinalities", num_nodes)?;
    let (_, num_edges) = lines.parse_one::<usize>("edge count")?;
    let mut edges = Vec::with_capacity(num_edges);
    for e in 0..num_edges {
        let (line, pair) = lines.parse_vec::<usize>(&format!("edge {e}"), 2)?;
        if pair[0] >= pair[1] || pair[1] >= num_nodes {
            return Err(parse_err(
                path,
                line,
                format!("edge {e}: ({}, {}) is not canonical", pair[0], pair[1]),
            ));
        }
        edges.push((pair[0], pair[1]));
    }
    let mut node_potentials = Vec::with_capacity(num_nodes);
    for (u, &k) in cards.iter().enumerate() {
        let (_, t) = lines.parse_vec::<f64>(&format!("table for node {u}"), k)?;
        node_potentials.push(t);
    }
    let mut edge_potentials = Vec::with_capacity(num_edges);
    for (e, &(u, v)) in edges.iter().enumerate() {
        let (_, t) =
            lines.parse_vec::<f64>(&format!("table for edge {e}"), cards[u] * cards[v])?;
        edge_potentials.push(t);
    }
    PairwiseMRF::new(cards, edges, node_potentials, edge_potentials)
}

/// UAI MARKOV reader restricted to unary and pairwise cliques. Table
/// entries are products and must be positive; they are converted to scores
/// by the natural log. Repeated cliques multiply, i.e. their logs add.
fn read_uai_model(path: &Path, text: &str) -> Result<PairwiseMRF> {
    let tokens: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
        .collect();
    let mut pos = 0usize;
    let mut take = |what: &str| -> Result<(usize, &str)> {
        if pos < tokens.len() {
            let t = tokens[pos];
            pos += 1;
            Ok(t)
        } else {
            Err(parse_err(
                path,
                tokens.last().map_or(1, |&(n, _)| n),
                format!("unexpected end of file, expected {what}"),
            ))
        }
    };
    let (line, header) = take("MARKOV header")?;
    if header != "MARKOV" {
        return Err(parse_err(path, line, format!("bad header `{header}`")));
    }
    let parse_usize = |(line, t): (usize, &str), what: &str| -> Result<usize> {
        t.parse()
            .map_err(|_| parse_err(path, line, format!("cannot parse `{t}` as {what}")))
    };
    let num_vars = parse_usize(take("variable count")?, "variable count")?;
    let mut cards = Vec::with_capacity(num_vars);
    for _ in 0..num_vars {
        cards.push(parse_usize(take("cardinality")?, "cardinality")?);
    }
    let num_cliques = parse_usize(take("clique count")?, "clique count")?;
    let mut scopes = Vec::with_capacity(num_cliques);
    for c in 0..num_cliques {
        let size = parse_usize(take("scope size")?, "scope size")?;
        if size == 0 || size > 2 {
            let line = tokens[pos - 1].0;
            return Err(parse_err(
                path,
                line,
                format!("clique {c}: only unary and pairwise scopes are supported, got arity {size}"),
            ));
        }
        let mut scope = Vec::with_capacity(size);
        for _ in 0..size {
            let var = parse_usize(take("scope variable")?, "scope variable")?;
            if var >= num_vars {
                let line = tokens[pos - 1].0;
                return Err(parse_err(path, line, format!("clique {c}: variable {var} out of range")));
            }
            scope.push(var);
        }
        if size == 2 && scope[0] == scope[1] {
            let line = tokens[pos - 1].0;
            return Err(parse_err(path, line, format!("clique {c}: self-loop on variable {}", scope[0])));
        }
        scopes.push(scope);
    }
    let mut node_log: Vec<Vec<f64>> = cards.iter().map(|&k| vec![0.0; k]).collect();
    let mut edge_log: std::collections::BTreeMap<(usize, usize), Vec<f64>> =
        std::collections::BTreeMap::new();
    for (c, scope) in scopes.iter().enumerate() {
        let count = parse_usize(take("table size")?, "table size")?;
        let expected: usize = scope.iter().map(|&v| cards[v]).product();
        if count != expected {
            let line = tokens[pos - 1].0;
            return Err(parse_err(
                path,
                line,
                format!("table for clique {c}: expected {expected} values, got {count}"),
            ));
        }
        let mut values = Vec::with_capacity(count);
        let mut last_line = 1;
        for i in 0..count {
            match take("table value") {
                Ok((line, t)) => {
                    last_line = line;
                    let v: f64 = t.parse().map_err(|_| {
                        parse_err(path, line, format!("cannot parse `{t}` as a table value"))
                    })?;
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(parse_err(
                            path,
                            line,
                            format!("table for clique {c}: entry {v} is not positive"),
                        ));
                    }
                    values.push(v.ln());
                }
                Err(_) => {
                    return Err(parse_err(
                        path,
                        last_line,
                        format!("table for clique {c}: expected {expected} values, got {i}"),
                    ))
                }
            }
        }
        match scope.as_slice() {
            [u] => {
                for (dst, v) in node_log[*u].iter_mut().zip(values) {
                    *dst += v;
                }
            }
            [a, b] => {
                let (u, v, table) = if a < b {
                    (*a, *b, values)
                } else {
                    // Transpose into canonical orientation.
                    let (ka, kb) = (cards[*a], cards[*b]);
                    let mut t = vec![0.0; ka * kb];
                    for xa in 0..ka {
                        for xb in 0..kb {
                            t[xb * ka + xa] = values[xa * kb + xb];
                        }
                    }
                    (*b, *a, t)
                };
                let entry = edge_log
                    .entry((u, v))
                    .or_insert_with(|| vec![0.0; cards[u] * cards[v]]);
                for (dst, x) in entry.iter_mut().zip(table) {
                    *dst += x;
                }
            }
            _ => unreachable!("scope arity checked above"),
        }
    }
    let (edges, edge_potentials): (Vec<_>, Vec<_>) = edge_log.into_iter().unzip();
    PairwiseMRF::new(cards, edges, node_log, edge_potentials)
}

fn parse_model(path: &Path, text: &str) -> Result<PairwiseMRF> {
    let header = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    match header {
        "PMRF" => read_native_model(path, text),
        "MARKOV" => read_uai_model(path, text),
        other => Err(parse_err(path, 1, format!("unknown header `{other}`"))),
    }
}

/// Parses a model from text, dispatching on the header: native `PMRF` or
/// UAI `MARKOV`.
pub fn model_from_str(text: &str) -> Result<PairwiseMRF> {
    parse_model(Path::new("<input>"), text)
}

/// Reads a model file; formats as in [`model_from_str`].
pub fn read_model(path: impl AsRef<Path>) -> Result<PairwiseMRF> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_model(path, &text)
}

/// Plan serialization: tree count, then per tree its node-id line and
/// edge-id line. Edge ids index the model's edge list.
pub fn plan_to_string(plan: &DecompositionPlan) -> String {
    let mut out = String::from("PLAN\n");
    let _ = writeln!(out, "{}", plan.num_trees());
    for tree in plan.trees() {
        let _ = writeln!(out, "TREE {}", tree.tree_id());
        let _ = writeln!(out, "{}", join(tree.nodes().iter()));
        let _ = writeln!(out, "{}", join(tree.edges().iter()));
    }
    out
}

pub fn write_plan(plan: &DecompositionPlan, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, plan_to_string(plan)).map_err(|e| io_err(path, e))
}

/// Parses a plan from text and validates it as a cover of the given model.
pub fn plan_from_str(text: &str, mrf: &PairwiseMRF) -> Result<DecompositionPlan> {
    parse_plan(Path::new("<input>"), text, mrf)
}

/// Reads a plan file and validates it as a cover of the given model.
pub fn read_plan(path: impl AsRef<Path>, mrf: &PairwiseMRF) -> Result<DecompositionPlan> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_plan(path, &text, mrf)
}

fn parse_plan(path: &Path, text: &str, mrf: &PairwiseMRF) -> Result<DecompositionPlan> {
    let mut lines = Lines::new(path, text);
    let (line, header) = lines.next("PLAN header")?;
    if header != "PLAN" {
        return Err(parse_err(path, line, format!("bad header `{header}`")));
    }
    let (_, num_trees) = lines.parse_one::<usize>("tree count")?;
    let mut trees = Vec::with_capacity(num_trees);
    for t in 0..num_trees {
        let (line, tag) = lines.next("TREE header")?;
        let expected = format!("TREE {t}");
        if tag != expected {
            return Err(parse_err(path, line, format!("expected `{expected}`, got `{tag}`")));
        }
        let (line, node_ids) = lines
            .next("tree node ids")
            .and_then(|(line, text)| {
                let ids = text
                    .split_whitespace()
                    .map(|f| {
                        f.parse::<usize>().map_err(|_| {
                            parse_err(path, line, format!("cannot parse node id `{f}`"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((line, ids))
            })?;
        for &u in &node_ids {
            if u >= mrf.num_nodes() {
                return Err(parse_err(path, line, format!("tree {t}: node id {u} out of range")));
            }
        }
        let (line, edge_ids) = {
            // A one-node tree has an empty edge line only if the file keeps
            // it; require the line but allow it to be the next TREE header
            // when empty lists were skipped. Trees here always have
            // at least one node and nodes-1 edges, so a zero-edge tree has
            // no edge line to read when blank lines were stripped.
            if node_ids.len() == 1 {
                (line, Vec::new())
            } else {
                let (line, text) = lines.next("tree edge ids")?;
                let ids = text
                    .split_whitespace()
                    .map(|f| {
                        f.parse::<usize>().map_err(|_| {
                            parse_err(path, line, format!("cannot parse edge id `{f}`"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                (line, ids)
            }
        };
        for &e in &edge_ids {
            if e >= mrf.num_edges() {
                return Err(parse_err(path, line, format!("tree {t}: edge id {e} out of range")));
            }
        }
        trees.push(TreeSubgraph::new(t, node_ids, edge_ids, mrf, 1.0)?);
    }
    DecompositionPlan::from_trees(trees, mrf)
}

/// Trace CSV with a fixed header and 17-significant-digit floats.
pub fn trace_to_string(trace: &[TraceRow]) -> String {
    let mut out = String::from(
        "iter,seconds,lp_obj,decoded_value,max_violation,primal_residual,dual_bound,ergodic_consensus\n",
    );
    for row in trace {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            row.iter,
            row.seconds,
            row.lp_objective,
            row.decoded_value,
            row.max_violation,
            row.primal_residual,
            row.dual_bound,
            row.ergodic_consensus
        );
    }
    out
}

pub fn write_trace(trace: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, trace_to_string(trace)).map_err(|e| io_err(path, e))
}

/// Assignment file: one label per line.
pub fn write_assignment(assignment: &Assignment, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for &x in assignment.labels() {
        let _ = writeln!(out, "{x}");
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_assignment(path: impl AsRef<Path>) -> Result<Assignment> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let label = line
            .parse::<usize>()
            .map_err(|_| parse_err(path, i + 1, format!("cannot parse label `{line}`")))?;
        labels.push(label);
    }
    Ok(Assignment::new(labels))
}
