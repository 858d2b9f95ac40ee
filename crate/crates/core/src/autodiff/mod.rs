//! Symbolic differentiation of expression DAGs.
//!
//! Every mode returns a [`DerivativeResult`] whose index set is positionally
//! `s_y ++ s_x` (and `s_y ++ s_x ++ s_x ...` for higher orders): the output's
//! axes followed by one copy of the variable's axes per order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{ExprDag, NodeId, NodeKind};
use crate::index::{IndexSet, LabelPool};
use crate::simplify::simplify;

mod compress;
mod cross;
mod cut;
mod forward;
mod higher;
mod reverse;

pub use compress::{compress, expand, expand_in};
pub use cross::{cross_country_diff, CrossReport};
pub use cut::{cut_diff, validate_cut, Cut};
pub use forward::forward_diff;
pub use higher::{default_modes, higher_order};
pub use reverse::reverse_diff;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Forward,
    Reverse,
    Cross,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Forward => "forward",
            Mode::Reverse => "reverse",
            Mode::Cross => "cross",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" | "fwd" => Ok(Mode::Forward),
            "reverse" | "rev" => Ok(Mode::Reverse),
            "cross" | "cross-country" => Ok(Mode::Cross),
            other => Err(Error::InvalidNode(format!("unknown mode `{other}`"))),
        }
    }
}

/// A derivative split as `core *_(s_core, s_delta, s_full) Delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRecord {
    pub core_id: u32,
    /// `(s_core, s_delta, s_full)` of the expanding product.
    pub sig: (Vec<String>, Vec<String>, Vec<String>),
    /// Paired labels of the unit tensor, with their extents.
    pub delta_pairs: Vec<(String, String)>,
    pub delta_dims: Vec<usize>,
}

impl CompressionRecord {
    pub fn core(&self) -> NodeId {
        NodeId(self.core_id)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("records serialize")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        serde_json::from_value(v.clone()).map_err(|e| Error::Format(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct DerivativeResult {
    /// Holds the derivative as its single output (the core, when compressed).
    pub dag: ExprDag,
    pub root: NodeId,
    pub wrt: String,
    pub output: String,
    pub order: usize,
    pub compression: Option<CompressionRecord>,
}

impl DerivativeResult {
    /// Index set of the stored expression (the core's, when compressed).
    pub fn index_set(&self) -> &IndexSet {
        self.dag.shape(self.root)
    }

    /// Index set of the full derivative.
    pub fn full_dims(&self) -> Vec<usize> {
        match &self.compression {
            None => self.index_set().dims(),
            Some(rec) => {
                let core = self.dag.shape(self.root);
                rec.sig
                    .2
                    .iter()
                    .map(|l| {
                        if let Some(p) = rec.sig.0.iter().position(|c| c == l) {
                            return core.dims()[p];
                        }
                        let k = rec
                            .delta_pairs
                            .iter()
                            .position(|(a, b)| a == l || b == l)
                            .expect("output label comes from core or delta");
                        rec.delta_dims[k]
                    })
                    .collect()
            }
        }
    }

    /// The derivative as a full-shape DAG, expanding a compressed core.
    pub fn expanded(&self) -> Result<DerivativeResult> {
        match &self.compression {
            None => Ok(self.clone()),
            Some(_) => expand(self),
        }
    }
}

pub(crate) fn derivative_name(output: &str, wrt: &str, order: usize) -> String {
    if order == 1 {
        format!("d_{output}_d_{wrt}")
    } else {
        format!("d{order}_{output}_d_{wrt}")
    }
}

/// Wrap `root` of `dag` as a simplified derivative result.
pub(crate) fn finish(
    mut dag: ExprDag,
    root: NodeId,
    output: &str,
    wrt: &str,
    order: usize,
) -> DerivativeResult {
    let name = derivative_name(output, wrt, order);
    dag.clear_outputs();
    dag.set_output(name.clone(), root);
    let dag = simplify(&dag);
    let root = dag.output(&name).expect("output kept by simplify");
    DerivativeResult {
        dag,
        root,
        wrt: wrt.to_string(),
        output: output.to_string(),
        order,
        compression: None,
    }
}

/// `n` labels not occurring in any of `avoid`.
pub(crate) fn fresh_labels(avoid: &[&[String]], n: usize) -> Vec<String> {
    let mut pool = LabelPool::avoiding(avoid.iter().flat_map(|s| s.iter().cloned()));
    pool.fresh_n(n)
}

/// Distinct local labels for the axes of a node.
pub(crate) fn local_labels(n: usize) -> Vec<String> {
    fresh_labels(&[], n)
}

/// Zero tensor with index set `dims`.
pub(crate) fn zero_of(dag: &mut ExprDag, dims: &[usize]) -> Result<NodeId> {
    if dims.is_empty() {
        return Ok(dag.scalar(0.0));
    }
    let labels = local_labels(dims.len());
    Ok(dag.filled(IndexSet::from_parts(&labels, dims)?, 0.0))
}

/// Unit tensor pairing axes with extents `dims` against fresh copies.
pub(crate) fn unit_of(dag: &mut ExprDag, dims: &[usize]) -> Result<NodeId> {
    if dims.is_empty() {
        return Ok(dag.scalar(1.0));
    }
    let labels = local_labels(2 * dims.len());
    let (l, r) = labels.split_at(dims.len());
    dag.delta(IndexSet::from_parts(l, dims)?, IndexSet::from_parts(r, dims)?)
}

/// `a + b` where `None` stands for zero.
pub(crate) fn accumulate(dag: &mut ExprDag, a: Option<NodeId>, b: NodeId) -> Result<NodeId> {
    match a {
        None => Ok(b),
        Some(a) => dag.add(a, b),
    }
}

/// Check `wrt` is an input and return its extents.
pub(crate) fn variable_dims(dag: &ExprDag, wrt: &str) -> Result<Vec<usize>> {
    dag.input_shape(wrt)
        .map(|s| s.dims())
        .ok_or_else(|| Error::UnknownVariable(wrt.to_string()))
}

pub(crate) fn is_variable(dag: &ExprDag, id: NodeId, wrt: &str) -> bool {
    matches!(dag.kind(id), NodeKind::Variable { name } if name == wrt)
}

/// Differentiate `output` with respect to `wrt` in one mode.
pub fn differentiate(dag: &ExprDag, output: &str, wrt: &str, mode: Mode) -> Result<DerivativeResult> {
    dag.output(output)?;
    variable_dims(dag, wrt)?;
    match mode {
        Mode::Forward => {
            let mut all = forward_diff(dag, wrt)?;
            Ok(all.remove(output).expect("every output is differentiated"))
        }
        Mode::Reverse => {
            let mut all = reverse_diff(dag, output)?;
            Ok(all.remove(wrt).expect("every input is differentiated"))
        }
        Mode::Cross => Ok(cross_country_diff(dag, output, wrt)?.result),
    }
}

#[cfg(test)]
mod tests;
