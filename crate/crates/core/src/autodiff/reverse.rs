//! Reverse mode: pullbacks `v̄` over `s_y ++ s_v`, output to input.

use std::collections::{BTreeMap, HashMap};

use super::{accumulate, finish, fresh_labels, local_labels, unit_of, zero_of, DerivativeResult};
use crate::error::Result;
use crate::expr::{ExprDag, NodeId, NodeKind};
use crate::index::IndexSet;
use crate::registry::{self, UnaryKind};

/// Derivatives of `output` with respect to every input variable.
pub fn reverse_diff(dag: &ExprDag, output: &str) -> Result<BTreeMap<String, DerivativeResult>> {
    let mut g = dag.compacted();
    let y = g.output(output)?;
    let bar = pullbacks(&mut g, y)?;
    let ydims = g.shape(y).dims();
    let mut out = BTreeMap::new();
    for (name, shape) in g.inputs().to_vec() {
        let mut acc = None;
        for v in g.variable_nodes(&name) {
            if let Some(&b) = bar.get(&v) {
                acc = Some(accumulate(&mut g, acc, b)?);
            }
        }
        let root = match acc {
            Some(r) => r,
            None => zero_of(&mut g, &[ydims.clone(), shape.dims()].concat())?,
        };
        out.insert(name.clone(), finish(g.clone(), root, output, &name, 1));
    }
    Ok(out)
}

/// Pullbacks of all nodes `y` depends on; absent entries are zero.
pub(crate) fn pullbacks(g: &mut ExprDag, y: NodeId) -> Result<HashMap<NodeId, NodeId>> {
    let ydims = g.shape(y).dims();
    let q = ydims.len();
    let seed = unit_of(g, &ydims)?;
    let order = g.reachable(&[y]);
    let mut bar: HashMap<NodeId, NodeId> = HashMap::new();
    bar.insert(y, seed);
    let add = |g: &mut ExprDag, bar: &mut HashMap<NodeId, NodeId>, v: NodeId, t: NodeId| -> Result<()> {
        let cur = bar.get(&v).copied();
        let s = accumulate(g, cur, t)?;
        bar.insert(v, s);
        Ok(())
    };
    for id in order.into_iter().rev() {
        let Some(&cb) = bar.get(&id) else { continue };
        match g.kind(id).clone() {
            NodeKind::Add { left, right } => {
                add(g, &mut bar, left, cb)?;
                add(g, &mut bar, right, cb)?;
            }
            NodeKind::Einsum {
                s1,
                s2,
                s3,
                left,
                right,
            } => {
                let s4 = fresh_labels(&[&s1, &s2, &s3], q);
                let ta = product_pullback(g, cb, &s4, &s3, right, &s2, left, &s1)?;
                add(g, &mut bar, left, ta)?;
                let tb = product_pullback(g, cb, &s4, &s3, left, &s1, right, &s2)?;
                add(g, &mut bar, right, tb)?;
            }
            NodeKind::ElemUnary { op, child } => {
                let UnaryKind::Elementwise { derivative, .. } = registry::lookup(&op)?.kind else {
                    unreachable!("element-wise node holds an element-wise op")
                };
                if let Some(fp) = derivative(g, child, id)? {
                    let labels = local_labels(g.rank(child) + q);
                    let (s1, s2) = labels.split_at(g.rank(child));
                    let s21 = [s2, s1].concat();
                    let t = g.einsum(cb, &s21, fp, s1, &s21)?;
                    add(g, &mut bar, child, t)?;
                }
            }
            NodeKind::GenUnary { op, child } => {
                let UnaryKind::General { derivative, .. } = registry::lookup(&op)?.kind else {
                    unreachable!("general node holds a general op")
                };
                let fp = derivative(g, child, id)?;
                let labels = local_labels(q + g.rank(id) + g.rank(child));
                let (s3, rest) = labels.split_at(q);
                let (s2, s1) = rest.split_at(g.rank(id));
                let t = g.einsum(
                    cb,
                    &[s3, s2].concat(),
                    fp,
                    &[s2, s1].concat(),
                    &[s3, s1].concat(),
                )?;
                add(g, &mut bar, child, t)?;
            }
            _ => {}
        }
    }
    Ok(bar)
}

/// Contribution `C̄ *_(s4 s3, s_other, s4 s_target) other` of a product to the
/// pullback of one operand. Labels summed only inside the target operand do
/// not occur in `C̄` or `other`; the result is constant along them, so
/// `other` is first broadcast over those axes.
#[allow(clippy::too_many_arguments)]
fn product_pullback(
    g: &mut ExprDag,
    cb: NodeId,
    s4: &[String],
    s3: &[String],
    other: NodeId,
    s_other: &[String],
    target: NodeId,
    s_target: &[String],
) -> Result<NodeId> {
    let lhs = [s4, s3].concat();
    let out = [s4, s_target].concat();
    let tdims = g.shape(target).dims();
    let extra: Vec<usize> = (0..s_target.len())
        .filter(|&k| !s3.contains(&s_target[k]) && !s_other.contains(&s_target[k]))
        .collect();
    if extra.is_empty() {
        return g.einsum(cb, &lhs, other, s_other, &out);
    }
    let el: Vec<String> = extra.iter().map(|&k| s_target[k].clone()).collect();
    let ed: Vec<usize> = extra.iter().map(|&k| tdims[k]).collect();
    let ones = g.filled(IndexSet::from_parts(&el, &ed)?, 1.0);
    let widened = [s_other.to_vec(), el.clone()].concat();
    let ext = g.einsum(other, s_other, ones, &el, &widened)?;
    g.einsum(cb, &lhs, ext, &widened, &out)
}
