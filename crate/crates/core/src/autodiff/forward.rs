//! Forward mode: pushforwards `v̇` over `s_v ++ s_x`, input to output.

use std::collections::{BTreeMap, HashMap};

use super::{accumulate, finish, fresh_labels, is_variable, local_labels, unit_of, variable_dims, zero_of, DerivativeResult};
use crate::error::Result;
use crate::expr::{ExprDag, NodeId, NodeKind};
use crate::registry::{self, UnaryKind};

/// Derivatives of every output with respect to `wrt`.
pub fn forward_diff(dag: &ExprDag, wrt: &str) -> Result<BTreeMap<String, DerivativeResult>> {
    let xdims = variable_dims(dag, wrt)?;
    let mut g = dag.compacted();
    let roots: Vec<NodeId> = g.outputs().iter().map(|(_, id)| *id).collect();
    let dot = pushforwards(&mut g, &roots, wrt, &xdims)?;
    let mut out = BTreeMap::new();
    for (name, y) in g.outputs().to_vec() {
        let root = match dot.get(&y) {
            Some(&d) => d,
            None => {
                let dims = [g.shape(y).dims(), xdims.clone()].concat();
                zero_of(&mut g, &dims)?
            }
        };
        out.insert(name.clone(), finish(g.clone(), root, &name, wrt, 1));
    }
    Ok(out)
}

/// Pushforwards of all nodes reachable from `roots`; absent entries are zero.
pub(crate) fn pushforwards(
    g: &mut ExprDag,
    roots: &[NodeId],
    wrt: &str,
    xdims: &[usize],
) -> Result<HashMap<NodeId, NodeId>> {
    let order = g.reachable(roots);
    let seed = unit_of(g, xdims)?;
    let r = xdims.len();
    let mut dot: HashMap<NodeId, NodeId> = HashMap::new();
    for id in order {
        let kind = g.kind(id).clone();
        let d = match kind {
            NodeKind::Variable { .. } if is_variable(g, id, wrt) => Some(seed),
            NodeKind::Variable { .. }
            | NodeKind::ConstScalar { .. }
            | NodeKind::ConstTensor { .. }
            | NodeKind::Delta { .. } => None,
            NodeKind::Add { left, right } => match (dot.get(&left), dot.get(&right)) {
                (Some(&a), Some(&b)) => Some(g.add(a, b)?),
                (Some(&a), None) => Some(a),
                (None, Some(&b)) => Some(b),
                (None, None) => None,
            },
            NodeKind::Einsum {
                s1,
                s2,
                s3,
                left,
                right,
            } => {
                let s4 = fresh_labels(&[&s1, &s2, &s3], r);
                let out = [s3.clone(), s4.clone()].concat();
                let mut acc = None;
                if let Some(&ad) = dot.get(&left) {
                    let t = g.einsum(right, &s2, ad, &[s1.clone(), s4.clone()].concat(), &out)?;
                    acc = Some(t);
                }
                if let Some(&bd) = dot.get(&right) {
                    let t = g.einsum(left, &s1, bd, &[s2.clone(), s4.clone()].concat(), &out)?;
                    acc = Some(accumulate(g, acc, t)?);
                }
                acc
            }
            NodeKind::ElemUnary { op, child } => match dot.get(&child) {
                None => None,
                Some(&cd) => {
                    let UnaryKind::Elementwise { derivative, .. } = registry::lookup(&op)?.kind else {
                        unreachable!("element-wise node holds an element-wise op")
                    };
                    match derivative(g, child, id)? {
                        None => None,
                        Some(fp) => {
                            let s1 = local_labels(g.rank(child));
                            let s4 = fresh_labels(&[&s1], r);
                            let s14 = [s1.clone(), s4].concat();
                            Some(g.einsum(fp, &s1, cd, &s14, &s14)?)
                        }
                    }
                }
            },
            NodeKind::GenUnary { op, child } => match dot.get(&child) {
                None => None,
                Some(&cd) => {
                    let UnaryKind::General { derivative, .. } = registry::lookup(&op)?.kind else {
                        unreachable!("general node holds a general op")
                    };
                    let fp = derivative(g, child, id)?;
                    let labels = local_labels(g.rank(id) + g.rank(child) + r);
                    let (s2, rest) = labels.split_at(g.rank(id));
                    let (s1, s4) = rest.split_at(g.rank(child));
                    Some(g.einsum(
                        fp,
                        &[s2, s1].concat(),
                        cd,
                        &[s1, s4].concat(),
                        &[s2, s4].concat(),
                    )?)
                }
            },
        };
        if let Some(d) = d {
            dot.insert(id, d);
        }
    }
    Ok(dot)
}
