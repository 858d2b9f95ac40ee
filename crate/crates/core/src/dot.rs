//! Graphviz export.
//!
//! Nodes of rank four or more are filled red; unit tensors get a dashed
//! outline so an eliminable trailing Delta stands out from the rest.

use std::fmt::Write;

use crate::expr::{ExprDag, NodeId, NodeKind};

/// Rank from which nodes are highlighted.
pub const HIGH_ORDER: usize = 4;

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn label(dag: &ExprDag, id: NodeId) -> String {
    let node = dag.node(id);
    let what = match &node.kind {
        NodeKind::Variable { name } => name.clone(),
        NodeKind::ConstScalar { bits } => format!("{:?}", f64::from_bits(*bits)),
        NodeKind::ConstTensor { .. } => "const".into(),
        NodeKind::Delta { left, right } => format!("delta({}|{})", left.concat(), right.concat()),
        NodeKind::Add { .. } => "+".into(),
        NodeKind::Einsum { s1, s2, s3, .. } => {
            format!("*({},{},{})", s1.concat(), s2.concat(), s3.concat())
        }
        NodeKind::ElemUnary { op, .. } | NodeKind::GenUnary { op, .. } => op.clone(),
    };
    let dims: Vec<String> = node.shape.iter().map(|ix| ix.dim.to_string()).collect();
    format!("{what}\\n{} [{}]", node.kind.name(), dims.join("x"))
}

/// DOT text for the nodes reachable from `roots`.
pub fn to_dot(dag: &ExprDag, roots: &[NodeId]) -> String {
    let mut out = String::from("digraph tensorcalc {\n  rankdir=BT;\n  node [shape=box, fontname=\"monospace\"];\n");
    let live = dag.reachable(roots);
    for &id in &live {
        let mut style = Vec::new();
        if dag.rank(id) >= HIGH_ORDER {
            style.push("style=filled, fillcolor=red, fontcolor=white".to_string());
        }
        if dag.kind(id).is_delta() {
            style.push("peripheries=2".to_string());
        }
        let extra = if style.is_empty() { String::new() } else { format!(", {}", style.join(", ")) };
        let _ = writeln!(out, "  n{} [label=\"{}\"{extra}];", id.0, escape(&label(dag, id)));
    }
    for &id in &live {
        for (slot, c) in dag.kind(id).children().into_iter().enumerate() {
            let _ = writeln!(out, "  n{} -> n{} [label=\"{slot}\"];", c.0, id.0);
        }
    }
    for (name, id) in dag.outputs() {
        if live.contains(id) {
            let _ = writeln!(out, "  out_{0} [label=\"{0}\", shape=plaintext];\n  n{1} -> out_{0};", escape(name), id.0);
        }
    }
    out.push_str("}\n");
    out
}
