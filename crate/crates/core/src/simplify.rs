//! Semantics-preserving DAG cleanup.
//!
//! Rules, applied bottom-up and repeated to a fixpoint:
//! - `A + 0 -> A`, products with a zero operand become zero constants;
//! - constant folding of scalar and small tensor subexpressions;
//! - `1 * A` with an identity relabelling collapses to `A`, and pure
//!   relabelling products are folded into the parent's label lists;
//! - unit tensors are contracted away by index substitution whenever every
//!   pair has an index that is summed over ([`delta_contract`]).
//!
//! Common subexpressions need no pass of their own: the node store is hash-consed.

use std::collections::{HashMap, HashSet};

use crate::expr::{ExprDag, NodeId, NodeKind};
use crate::index::{IndexSet, LabelPool};
use crate::kernel;
use crate::registry::{self, UnaryKind};
use crate::tensor::DenseTensor;

/// Largest constant tensor produced by folding.
const FOLD_LIMIT: usize = 1 << 14;

pub fn simplify(dag: &ExprDag) -> ExprDag {
    let mut cur = dag.compacted();
    for _ in 0..=cur.len() {
        let mut next = pass(&cur, false);
        if next.len() > cur.len() {
            next = pass(&cur, true);
            if next.len() > cur.len() {
                return cur;
            }
        }
        if same_structure(&cur, &next) {
            return next;
        }
        cur = next;
    }
    cur
}

fn same_structure(a: &ExprDag, b: &ExprDag) -> bool {
    a.len() == b.len()
        && a.outputs() == b.outputs()
        && a.nodes().zip(b.nodes()).all(|((_, x), (_, y))| x == y)
}

/// One bottom-up sweep. A `strict` sweep leaves operands that have several
/// consumers alone whenever a rewrite would add nodes next to them.
fn pass(dag: &ExprDag, strict: bool) -> ExprDag {
    let mut out = ExprDag::new();
    for (name, shape) in dag.inputs() {
        out.variable(name, shape.clone()).expect("inputs are consistent");
    }
    let roots: Vec<NodeId> = dag.outputs().iter().map(|(_, id)| *id).collect();
    let mut map: HashMap<NodeId, NodeId> = HashMap::new();
    let live = dag.reachable(&roots);
    let mut uses: HashMap<NodeId, usize> = HashMap::new();
    for &id in &live {
        for c in dag.kind(id).children() {
            *uses.entry(c).or_default() += 1;
        }
    }
    let mut shared: HashSet<NodeId> = HashSet::new();
    for id in live {
        let node = dag.node(id);
        let kind = crate::expr::remap_children(node.kind.clone(), &map);
        let mut nid = out.rebuild(kind, &node.shape).expect("rebuilt node is valid");
        for _ in 0..8 {
            let next = rewrite_guarded(&mut out, nid, &shared);
            if next == nid {
                break;
            }
            nid = next;
        }
        map.insert(id, nid);
        if strict && uses.get(&id).copied().unwrap_or(0) > 1 {
            shared.insert(nid);
        }
    }
    for (name, id) in dag.outputs() {
        out.set_output(name.clone(), map[id]);
    }
    out.compacted()
}

pub fn is_zero(dag: &ExprDag, id: NodeId) -> bool {
    match dag.kind(id) {
        NodeKind::ConstScalar { bits } => f64::from_bits(*bits) == 0.0,
        NodeKind::ConstTensor { value } => value.0.data().iter().all(|&v| v == 0.0),
        _ => false,
    }
}

fn uniform_value(dag: &ExprDag, id: NodeId) -> Option<f64> {
    match dag.kind(id) {
        NodeKind::ConstTensor { value } => {
            let d = value.0.data();
            let first = *d.first()?;
            d.iter().all(|&v| v.to_bits() == first.to_bits()).then_some(first)
        }
        _ => None,
    }
}

fn const_value(dag: &ExprDag, id: NodeId) -> Option<DenseTensor> {
    match dag.kind(id) {
        NodeKind::ConstScalar { bits } => Some(DenseTensor::scalar(f64::from_bits(*bits))),
        NodeKind::ConstTensor { value } => Some((*value.0).clone()),
        _ => None,
    }
}

fn constant(dag: &mut ExprDag, shape: &IndexSet, t: DenseTensor) -> NodeId {
    dag.tensor(shape.clone(), t).expect("folded value matches shape")
}

fn zero_like(dag: &mut ExprDag, id: NodeId) -> NodeId {
    let shape = dag.shape(id).clone();
    if shape.is_empty() {
        dag.scalar(0.0)
    } else {
        dag.filled(shape, 0.0)
    }
}

/// One local rewrite at `id`; returns `id` when nothing applies.
pub fn rewrite(dag: &mut ExprDag, id: NodeId) -> NodeId {
    rewrite_guarded(dag, id, &HashSet::new())
}

fn rewrite_guarded(dag: &mut ExprDag, id: NodeId, shared: &HashSet<NodeId>) -> NodeId {
    let node = dag.node(id).clone();
    match &node.kind {
        NodeKind::Add { left, right } => {
            if is_zero(dag, *right) {
                return *left;
            }
            if is_zero(dag, *left) && dag.shape(*right) == &node.shape {
                return *right;
            }
            if let (Some(a), Some(b)) = (const_value(dag, *left), const_value(dag, *right)) {
                let v = a.zip_with(&b, |x, y| x + y).expect("add operands agree");
                return constant(dag, &node.shape, v);
            }
            id
        }
        NodeKind::ElemUnary { op, child } => {
            if let Some(c) = const_value(dag, *child) {
                if let Ok(UnaryKind::Elementwise { value, .. }) =
                    registry::lookup(op).map(|o| o.kind)
                {
                    return constant(dag, &node.shape, c.map(value));
                }
            }
            id
        }
        NodeKind::GenUnary { op, child } => {
            if let Some(c) = const_value(dag, *child) {
                if let Ok(UnaryKind::General { value, .. }) = registry::lookup(op).map(|o| o.kind)
                {
                    return constant(dag, &node.shape, value(&c));
                }
            }
            id
        }
        NodeKind::Einsum {
            s1,
            s2,
            s3,
            left,
            right,
        } => {
            if shared.contains(left) || shared.contains(right) {
                return rewrite_plain_einsum(dag, id, *left, *right);
            }
            rewrite_einsum(dag, id, s1, *left, s2, *right, s3)
        }
        _ => id,
    }
}

/// The einsum rules that never add nodes.
fn rewrite_plain_einsum(dag: &mut ExprDag, id: NodeId, left: NodeId, right: NodeId) -> NodeId {
    if is_zero(dag, left) || is_zero(dag, right) {
        return zero_like(dag, id);
    }
    id
}

fn rewrite_einsum(
    dag: &mut ExprDag,
    id: NodeId,
    s1: &[String],
    left: NodeId,
    s2: &[String],
    right: NodeId,
    s3: &[String],
) -> NodeId {
    if is_zero(dag, left) || is_zero(dag, right) {
        return zero_like(dag, id);
    }
    let shape = dag.shape(id).clone();
    if let (Some(a), Some(b)) = (const_value(dag, left), const_value(dag, right)) {
        if shape.size() <= FOLD_LIMIT.max(a.len()).max(b.len()) {
            let v = kernel::contract_reference(&a, s1, &b, s2, s3);
            return constant(dag, &shape, v);
        }
    }
    if dag.kind(left).is_delta() && dag.kind(right).is_delta() {
        if let Some(n) = fold_delta_pair(dag, id) {
            return n;
        }
    }
    if dag.kind(left).is_delta() || dag.kind(right).is_delta() {
        if let DeltaOutcome::Eliminated(n) = delta_contract(dag, id) {
            return n;
        }
    }
    // a uniform constant operand becomes a scalar factor
    for (c, s_c, other, s_o) in [(left, s1, right, s2), (right, s2, left, s1)] {
        if let Some(v) = uniform_value(dag, c) {
            let broadcast = s_c.iter().any(|l| !s_o.contains(l) && s3.contains(l));
            if !broadcast {
                let dims = dag.shape(c).dims();
                let factor: f64 = s_c
                    .iter()
                    .zip(&dims)
                    .filter(|(l, _)| !s_o.contains(l))
                    .map(|(_, &d)| d as f64)
                    .product();
                let k = dag.scalar(v * factor);
                let r = if c == left {
                    dag.einsum(k, &[] as &[String], other, s_o, s3)
                } else {
                    dag.einsum(other, s_o, k, &[], s3)
                };
                if let Ok(n) = r {
                    return n;
                }
            }
        }
    }
    // c * (d * X) becomes (c d) * X
    for (c, s_c, inner, s_i) in [(left, s1, right, s2), (right, s2, left, s1)] {
        let Some(v) = dag.kind(c).scalar_value() else { continue };
        if !s_c.is_empty() {
            continue;
        }
        if let Some(n) = merge_scale(dag, v, inner, s_i, s3) {
            return n;
        }
    }
    // 1 * A with the identity relabelling
    for (c, s_c, other, s_o) in [(left, s1, right, s2), (right, s2, left, s1)] {
        if dag.kind(c).scalar_value() == Some(1.0) && s_c.is_empty() && s_o == s3 {
            return other;
        }
    }
    // fold pure relabellings of operands into this node
    for side in 0..2 {
        let (c, s_c) = if side == 0 { (left, s1) } else { (right, s2) };
        if let Some((inner, inner_labels, scale)) = pure_relabel(dag, c) {
            let (o, s_o) = if side == 0 { (right, s2) } else { (left, s1) };
            // inner axis m carries child label s_c[k] where k is its output slot
            let new_labels: Vec<String> = inner_labels.iter().map(|l| s_c[*l].clone()).collect();
            if scale == 1.0 {
                let r = if side == 0 {
                    dag.einsum(inner, &new_labels, o, s_o, s3)
                } else {
                    dag.einsum(o, s_o, inner, &new_labels, s3)
                };
                if let Ok(n) = r {
                    return n;
                }
            } else if let Some(v) = dag.kind(o).scalar_value() {
                let s = dag.scalar(v * scale);
                if let Ok(n) = dag.einsum(s, &[] as &[String], inner, &new_labels, s3) {
                    return n;
                }
            }
        }
    }
    id
}

/// `v * inner` read with labels `s_inner -> s3`, where `inner` scales a
/// single tensor by a constant, as one scaling einsum.
fn merge_scale(dag: &mut ExprDag, v: f64, inner: NodeId, s_inner: &[String], s3: &[String]) -> Option<NodeId> {
    let NodeKind::Einsum {
        s1,
        s2,
        s3: t,
        left,
        right,
    } = dag.kind(inner).clone()
    else {
        return None;
    };
    let (d, x, s_x) = if s1.is_empty() {
        (dag.kind(left).scalar_value()?, right, s2)
    } else if s2.is_empty() {
        (dag.kind(right).scalar_value()?, left, s1)
    } else {
        return None;
    };
    let mut pool = LabelPool::avoiding(s_inner.iter().chain(s3).cloned());
    let map: HashMap<&String, String> = t.iter().zip(s_inner).map(|(a, b)| (a, b.clone())).collect();
    let mut summed: HashMap<&String, String> = HashMap::new();
    let labels: Vec<String> = s_x
        .iter()
        .map(|l| match map.get(l) {
            Some(m) => m.clone(),
            None => summed.entry(l).or_insert_with(|| pool.fresh()).clone(),
        })
        .collect();
    let k = dag.scalar(v * d);
    dag.einsum(x, &labels, k, &[] as &[String], s3).ok()
}

/// If `id` is `c * X` with no summation, return `(X, slot, c)` where `slot[m]`
/// is the output position of `X`'s axis `m`.
fn pure_relabel(dag: &ExprDag, id: NodeId) -> Option<(NodeId, Vec<usize>, f64)> {
    let NodeKind::Einsum {
        s1,
        s2,
        s3,
        left,
        right,
    } = dag.kind(id)
    else {
        return None;
    };
    let (c, x, s_x) = if s1.is_empty() {
        (*left, *right, s2)
    } else if s2.is_empty() {
        (*right, *left, s1)
    } else {
        return None;
    };
    let scale = dag.kind(c).scalar_value()?;
    if s_x.len() != s3.len() {
        return None;
    }
    let slot = s_x
        .iter()
        .map(|l| s3.iter().position(|o| o == l))
        .collect::<Option<Vec<_>>>()?;
    Some((x, slot, scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaOutcome {
    /// The unit tensor was contracted away.
    Eliminated(NodeId),
    /// A pair of the unit tensor survives into the output on both sides.
    Compressible,
    /// No elimination possible for another reason (outer product, trace).
    Unchanged,
}

/// Contract the unit-tensor operand of an einsum node by index substitution.
///
/// Pairs with an index that is summed over are removed; if some pair keeps
/// both indices in the output, the remaining unit tensor is kept and the
/// node is reported compressible.
pub fn delta_contract(dag: &mut ExprDag, id: NodeId) -> DeltaOutcome {
    let NodeKind::Einsum {
        s1,
        s2,
        s3,
        left,
        right,
    } = dag.kind(id).clone()
    else {
        return DeltaOutcome::Unchanged;
    };
    let (d, s_d, b, s_b) = if dag.kind(right).is_delta() {
        (right, s2, left, s1)
    } else if dag.kind(left).is_delta() {
        (left, s1, right, s2)
    } else {
        return DeltaOutcome::Unchanged;
    };
    let r = s_d.len() / 2;
    let dims = dag.shape(d).dims();
    let in_b = |l: &String| s_b.contains(l);
    let in_out = |l: &String| s3.contains(l);

    let mut subst: HashMap<String, String> = HashMap::new();
    let mut factor = 1.0;
    let mut keep: Vec<usize> = Vec::new();
    let mut compressible = false;
    for k in 0..r {
        let (p, q) = (&s_d[k], &s_d[k + r]);
        match (in_b(p), in_b(q), in_out(p), in_out(q)) {
            (_, _, true, true) => {
                compressible = true;
                keep.push(k);
            }
            (true, true, _, _) => keep.push(k),
            (true, false, _, _) => {
                subst.insert(q.clone(), p.clone());
            }
            (false, true, _, _) => {
                subst.insert(p.clone(), q.clone());
            }
            (false, false, false, false) => factor *= dims[k] as f64,
            (false, false, _, _) => keep.push(k),
        }
    }
    if keep.len() == r {
        return if compressible {
            DeltaOutcome::Compressible
        } else {
            DeltaOutcome::Unchanged
        };
    }
    let s3n: Vec<String> = s3
        .iter()
        .map(|l| subst.get(l).cloned().unwrap_or_else(|| l.clone()))
        .collect();
    let result = if keep.is_empty() {
        let one = dag.scalar(1.0);
        dag.einsum(b, &s_b, one, &[], &s3n)
    } else {
        let lab = |ix: usize| s_d[ix].clone();
        let kl: Vec<String> = keep.iter().map(|&k| lab(k)).collect();
        let kr: Vec<String> = keep.iter().map(|&k| lab(k + r)).collect();
        let kd: Vec<usize> = keep.iter().map(|&k| dims[k]).collect();
        let nd = dag
            .delta(
                IndexSet::from_parts(&kl, &kd).expect("distinct delta labels"),
                IndexSet::from_parts(&kr, &kd).expect("distinct delta labels"),
            )
            .expect("paired extents agree");
        let sd: Vec<String> = [kl, kr].concat();
        dag.einsum(b, &s_b, nd, &sd, &s3n)
    };
    let Ok(mut result) = result else {
        return DeltaOutcome::Unchanged;
    };
    if factor != 1.0 {
        result = dag.scale(factor, result).expect("scaling keeps shape");
    }
    DeltaOutcome::Eliminated(result)
}

/// Product of two unit tensors: union-find over paired labels. A scalar
/// result folds to a constant; a result that is a single unit tensor in the
/// same label order replaces the node.
fn fold_delta_pair(dag: &mut ExprDag, id: NodeId) -> Option<NodeId> {
    let NodeKind::Einsum {
        s1, s2, s3, left, right,
    } = dag.kind(id).clone()
    else {
        return None;
    };
    let mut parent: HashMap<String, String> = HashMap::new();
    let mut dim: HashMap<String, usize> = HashMap::new();
    fn find(p: &mut HashMap<String, String>, l: &str) -> String {
        let mut cur = l.to_string();
        while let Some(next) = p.get(&cur) {
            if *next == cur {
                break;
            }
            cur = next.clone();
        }
        cur
    }
    for (labels, node) in [(&s1, left), (&s2, right)] {
        let r = labels.len() / 2;
        let dims = dag.shape(node).dims();
        for (l, d) in labels.iter().zip(&dims) {
            dim.insert(l.clone(), *d);
            parent.entry(l.clone()).or_insert_with(|| l.clone());
        }
        for k in 0..r {
            let a = find(&mut parent, &labels[k]);
            let b = find(&mut parent, &labels[k + r]);
            if a != b {
                parent.insert(a, b);
            }
        }
    }
    let mut classes: HashMap<String, Vec<String>> = HashMap::new();
    let labels: Vec<String> = dim.keys().cloned().collect();
    for l in &labels {
        let root = find(&mut parent, l);
        classes.entry(root).or_default().push(l.clone());
    }
    let mut factor = 1.0;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for members in classes.values() {
        let outs: Vec<usize> = s3
            .iter()
            .enumerate()
            .filter(|(_, l)| members.contains(l))
            .map(|(i, _)| i)
            .collect();
        match outs.len() {
            0 => factor *= dim[&members[0]] as f64,
            2 => pairs.push((outs[0], outs[1])),
            _ => return None,
        }
    }
    if pairs.is_empty() {
        return Some(dag.scalar(factor));
    }
    if factor != 1.0 {
        return None;
    }
    pairs.sort();
    let r = pairs.len();
    let in_order = pairs.iter().enumerate().all(|(k, &(a, b))| a == k && b == k + r);
    if !in_order {
        return None;
    }
    let shape = dag.shape(id).clone();
    let d = shape.dims();
    let lab = shape.labels();
    let l = IndexSet::from_parts(&lab[..r], &d[..r]).ok()?;
    let rr = IndexSet::from_parts(&lab[r..], &d[r..]).ok()?;
    dag.delta(l, rr).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{evaluate, Environment};

    fn set(l: &str, d: &[usize]) -> IndexSet {
        IndexSet::parse(l, d).unwrap()
    }

    fn single(dag: &mut ExprDag, id: NodeId) -> ExprDag {
        dag.clear_outputs();
        dag.set_output("y", id);
        simplify(dag)
    }

    #[test]
    fn add_zero_is_identity() {
        let mut dag = ExprDag::new();
        let a = dag.variable("A", set("ij", &[2, 2])).unwrap();
        let z = dag.filled(set("ij", &[2, 2]), 0.0);
        let s = dag.add(a, z).unwrap();
        let out = single(&mut dag, s);
        let root = out.output("y").unwrap();
        assert!(matches!(out.kind(root), NodeKind::Variable { name } if name == "A"));
    }

    #[test]
    fn identity_matrix_product_is_removed() {
        let mut dag = ExprDag::new();
        let a = dag.variable("A", set("ij", &[2, 3])).unwrap();
        let d = dag.delta(set("j", &[3]), set("k", &[3])).unwrap();
        let p = dag.einsum(a, &["i", "j"], d, &["j", "k"], &["i", "k"]).unwrap();
        let out = single(&mut dag, p);
        let root = out.output("y").unwrap();
        assert!(matches!(out.kind(root), NodeKind::Variable { .. }));
    }

    #[test]
    fn scalar_constants_fold() {
        let mut dag = ExprDag::new();
        let a = dag.scalar(2.0);
        let b = dag.scalar(3.0);
        let p = dag.einsum(a, &[] as &[&str], b, &[], &[]).unwrap();
        let out = single(&mut dag, p);
        assert_eq!(out.kind(out.output("y").unwrap()).scalar_value(), Some(6.0));
    }

    #[test]
    fn delta_full_self_contraction_counts_entries() {
        // brute force: sum_{i,j} delta(i,j)^2 over n x n = n
        for n in 1..5usize {
            let brute: f64 = (0..n)
                .flat_map(|i| (0..n).map(move |j| if i == j { 1.0 } else { 0.0 }))
                .map(|v: f64| v * v)
                .sum();
            let mut dag = ExprDag::new();
            let d = dag.delta(set("i", &[n]), set("j", &[n])).unwrap();
            let p = dag.einsum(d, &["i", "j"], d, &["i", "j"], &[]).unwrap();
            let out = single(&mut dag, p);
            assert_eq!(out.kind(out.output("y").unwrap()).scalar_value(), Some(brute));
        }
    }

    #[test]
    fn delta_contract_renames() {
        let mut dag = ExprDag::new();
        let v = dag.variable("v", set("ik", &[2, 3])).unwrap();
        let d = dag.delta(set("k", &[3]), set("j", &[3])).unwrap();
        let p = dag.einsum(v, &["i", "k"], d, &["k", "j"], &["i", "j"]).unwrap();
        match delta_contract(&mut dag, p) {
            DeltaOutcome::Eliminated(n) => {
                let out = single(&mut dag, n);
                assert!(matches!(
                    out.kind(out.output("y").unwrap()),
                    NodeKind::Variable { .. }
                ));
            }
            other => panic!("expected elimination, got {other:?}"),
        }
    }

    #[test]
    fn surviving_pair_is_compressible() {
        // (V^T V)[j,l] * delta(i,k) -> [i,j,k,l]
        let mut dag = ExprDag::new();
        let c = dag.variable("C", set("jl", &[2, 2])).unwrap();
        let d = dag.delta(set("i", &[3]), set("k", &[3])).unwrap();
        let p = dag
            .einsum(c, &["j", "l"], d, &["i", "k"], &["i", "j", "k", "l"])
            .unwrap();
        assert_eq!(delta_contract(&mut dag, p), DeltaOutcome::Compressible);
    }

    #[test]
    fn outer_product_with_delta_is_unchanged() {
        let mut dag = ExprDag::new();
        let x = dag.variable("x", set("a", &[2])).unwrap();
        let d = dag.delta(set("i", &[3]), set("k", &[3])).unwrap();
        // delta index k is summed but i survives without a partner in x: broadcast
        let p = dag.einsum(x, &["a"], d, &["i", "k"], &["a", "i"]).unwrap();
        assert_eq!(delta_contract(&mut dag, p), DeltaOutcome::Unchanged);
    }

    #[test]
    fn simplify_is_idempotent_and_preserves_value() {
        let mut dag = ExprDag::new();
        let a = dag.variable("A", set("ij", &[2, 3])).unwrap();
        let x = dag.variable("x", set("j", &[3])).unwrap();
        let d = dag.delta(set("j", &[3]), set("k", &[3])).unwrap();
        let ad = dag.einsum(a, &["i", "j"], d, &["j", "k"], &["i", "k"]).unwrap();
        let y = dag.einsum(ad, &["i", "k"], x, &["k"], &["i"]).unwrap();
        let n = dag.neg(y).unwrap();
        let nn = dag.neg(n).unwrap();
        let z = dag.filled(set("i", &[2]), 0.0);
        let s = dag.add(nn, z).unwrap();
        let before = {
            dag.set_output("y", s);
            dag.clone()
        };
        let once = simplify(&before);
        let twice = simplify(&once);
        assert!(same_structure(&once, &twice));
        assert!(once.live_count() <= before.live_count());
        let env = Environment::new()
            .with("A", DenseTensor::from_fn(&[2, 3], |ix| (ix[0] * 3 + ix[1]) as f64))
            .with("x", DenseTensor::new(vec![3], vec![1.0, -1.0, 2.0]).unwrap());
        let v0 = evaluate(&before, &env).unwrap().values["y"].clone();
        let v1 = evaluate(&once, &env).unwrap().values["y"].clone();
        assert_eq!(v0, v1);
        // -(-(A x)) collapses to a single product
        assert!(once.live_count() <= 3, "{}", once.live_count());
    }
}
