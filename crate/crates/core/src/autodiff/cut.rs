//! Derivatives through a vertex cut: `∂y/∂x = Σ_{v∈S} v̄ *_(s1 s_v, s_v s2, s1 s2) v̇`.

use std::collections::HashSet;

use super::forward::pushforwards;
use super::reverse::pullbacks;
use super::{accumulate, finish, is_variable, local_labels, variable_dims, zero_of, DerivativeResult};
use crate::error::{Error, Result};
use crate::expr::{ExprDag, NodeId};

/// A node set meant to separate `x` from `y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cut {
    pub nodes: Vec<NodeId>,
}

/// Nodes of `order` that depend on `from` through paths avoiding `blocked`.
fn downstream(dag: &ExprDag, order: &[NodeId], from: &dyn Fn(NodeId) -> bool, blocked: &HashSet<NodeId>) -> HashSet<NodeId> {
    let mut out = HashSet::new();
    for &id in order {
        if blocked.contains(&id) {
            continue;
        }
        if from(id) || dag.kind(id).children().iter().any(|c| out.contains(c)) {
            out.insert(id);
        }
    }
    out
}

/// Every `x -> y` path must cross the cut exactly once.
pub fn validate_cut(dag: &ExprDag, output: &str, wrt: &str, cut: &Cut) -> Result<()> {
    variable_dims(dag, wrt)?;
    let y = dag.output(output)?;
    let order = dag.reachable(&[y]);
    let set: HashSet<NodeId> = cut.nodes.iter().copied().collect();
    let bypass = downstream(dag, &order, &|id| is_variable(dag, id, wrt), &set);
    if bypass.contains(&y) {
        return Err(Error::InvalidNode("cut does not separate the variable from the output".into()));
    }
    let from_x = downstream(dag, &order, &|id| is_variable(dag, id, wrt), &HashSet::new());
    for &s in &cut.nodes {
        if !from_x.contains(&s) {
            continue;
        }
        let below = downstream(dag, &order, &|id| id == s, &HashSet::new());
        if let Some(t) = cut.nodes.iter().find(|&&t| t != s && below.contains(&t)) {
            return Err(Error::InvalidNode(format!(
                "a path crosses the cut twice, at {s} and {t}"
            )));
        }
    }
    Ok(())
}

/// Derivative assembled from pullbacks and pushforwards at the cut nodes.
pub fn cut_diff(dag: &ExprDag, output: &str, wrt: &str, cut: &Cut) -> Result<DerivativeResult> {
    validate_cut(dag, output, wrt, cut)?;
    let xdims = variable_dims(dag, wrt)?;
    let mut g = dag.clone();
    let y = g.output(output)?;
    let dot = pushforwards(&mut g, &cut.nodes, wrt, &xdims)?;
    let bar = pullbacks(&mut g, y)?;
    let (q, r) = (g.rank(y), xdims.len());
    let mut acc = None;
    for &v in &cut.nodes {
        let (Some(&b), Some(&d)) = (bar.get(&v), dot.get(&v)) else {
            continue;
        };
        let labels = local_labels(q + g.rank(v) + r);
        let (s1, rest) = labels.split_at(q);
        let (sv, s2) = rest.split_at(g.rank(v));
        let t = g.einsum(b, &[s1, sv].concat(), d, &[sv, s2].concat(), &[s1, s2].concat())?;
        acc = Some(accumulate(&mut g, acc, t)?);
    }
    let root = match acc {
        Some(r) => r,
        None => {
            let dims = [g.shape(y).dims(), xdims].concat();
            zero_of(&mut g, &dims)?
        }
    };
    Ok(finish(g, root, output, wrt, 1))
}
