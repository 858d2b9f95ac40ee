use std::collections::BTreeMap;

use tensorcalc::parser::parse;
use tensorcalc::{ExprDag, NodeId, NodeKind};

/// Kind of every live node, with the kinds of its children in order.
fn inventory(dag: &ExprDag) -> BTreeMap<String, usize> {
    let y = dag.output("y").unwrap();
    let mut inv = BTreeMap::new();
    for id in dag.reachable(&[y]) {
        let kind = dag.kind(id);
        let head = match kind {
            NodeKind::Variable { name } => format!("var {name}"),
            NodeKind::ElemUnary { op, .. } | NodeKind::GenUnary { op, .. } => op.clone(),
            other => other.name().to_string(),
        };
        let kids: Vec<String> = kind.children().iter().map(|c| dag.kind(*c).name().to_string()).collect();
        *inv.entry(format!("{head}({})", kids.join(","))).or_default() += 1;
    }
    inv
}

fn consumers(dag: &ExprDag, id: NodeId) -> usize {
    let y = dag.output("y").unwrap();
    dag.reachable(&[y])
        .into_iter()
        .map(|n| dag.kind(n).children().iter().filter(|&&c| c == id).count())
        .sum()
}

#[test]
fn logistic_gradient_expression_has_the_expected_dag() {
    let dag = parse("var X : ij (4,3)\nvar w : j (3)\nX' * (elem_inverse(exp(X*w) + 1) .* exp(X*w))").unwrap();
    let want: BTreeMap<String, usize> = [
        ("var X()", 1),
        ("var w()", 1),
        // the literal 1 is broadcast to a constant vector
        ("tensor()", 1),
        ("einsum(variable,variable)", 1),
        ("exp(einsum)", 1),
        ("add(elem,tensor)", 1),
        ("elem_inverse(add)", 1),
        ("einsum(elem,elem)", 1),
        ("einsum(variable,einsum)", 1),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    assert_eq!(inventory(&dag), want);
    let exp = dag
        .reachable(&[dag.output("y").unwrap()])
        .into_iter()
        .find(|&id| matches!(dag.kind(id), NodeKind::ElemUnary { op, .. } if op == "exp"))
        .unwrap();
    assert_eq!(consumers(&dag, exp), 2, "exp(X*w) is shared");
    let x = dag.variable_nodes("X");
    assert_eq!(x.iter().map(|&v| consumers(&dag, v)).sum::<usize>(), 2);
    let y = dag.output("y").unwrap();
    assert_eq!(dag.shape(y).dims(), vec![3]);
}
