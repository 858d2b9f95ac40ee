//! JSON form of a DAG.
//!
//! Nodes are listed in topological order with stable field order; numbers
//! use shortest round-trip formatting, so values survive bit-exact.
//! Non-finite values are written as the strings `"NaN"`, `"inf"`, `"-inf"`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{ExprDag, Node, NodeId, NodeKind, TensorConst};
use crate::index::{Index, IndexSet};
use crate::tensor::DenseTensor;
use std::collections::HashMap;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Num {
    F(f64),
    S(String),
}

impl Num {
    fn from(v: f64) -> Num {
        if v.is_finite() {
            Num::F(v)
        } else if v.is_nan() {
            Num::S("NaN".into())
        } else if v > 0.0 {
            Num::S("inf".into())
        } else {
            Num::S("-inf".into())
        }
    }

    fn value(&self) -> Result<f64> {
        match self {
            Num::F(v) => Ok(*v),
            Num::S(s) => match s.as_str() {
                "NaN" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(Error::Format(format!("bad number `{s}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JsonNode {
    id: u32,
    kind: String,
    index_set: Vec<String>,
    children: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    op_name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    value: Option<Num>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    s1: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    s2: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    s3: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    left: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    right: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    data: Option<Vec<Num>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JsonInput {
    name: String,
    index_set: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JsonOutput {
    name: String,
    id: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JsonDag {
    inputs: Vec<JsonInput>,
    nodes: Vec<JsonNode>,
    outputs: Vec<JsonOutput>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    compression: Option<serde_json::Value>,
}

fn index_strings(s: &IndexSet) -> Vec<String> {
    s.iter().map(|ix| format!("{}:{}", ix.label, ix.dim)).collect()
}

fn parse_index_strings(v: &[String]) -> Result<IndexSet> {
    let mut out = Vec::with_capacity(v.len());
    for s in v {
        let (l, d) = s
            .split_once(':')
            .ok_or_else(|| Error::Format(format!("index `{s}` is not label:dim")))?;
        let dim: usize = d
            .parse()
            .map_err(|_| Error::Format(format!("bad extent in `{s}`")))?;
        out.push(Index::new(l, dim)?);
    }
    IndexSet::new(out)
}

/// Serialize the part of `dag` reachable from its outputs, plus an optional
/// compression record.
pub fn dag_to_json(dag: &ExprDag, compression: Option<serde_json::Value>) -> String {
    let dag = dag.compacted();
    let mut nodes = Vec::with_capacity(dag.len());
    for (id, node) in dag.nodes() {
        let mut j = JsonNode {
            id: id.0,
            kind: node.kind.name().to_string(),
            index_set: index_strings(&node.shape),
            children: node.kind.children().iter().map(|c| c.0).collect(),
            name: None,
            op_name: None,
            value: None,
            s1: None,
            s2: None,
            s3: None,
            left: None,
            right: None,
            data: None,
        };
        match &node.kind {
            NodeKind::Variable { name } => j.name = Some(name.clone()),
            NodeKind::ConstScalar { bits } => j.value = Some(Num::from(f64::from_bits(*bits))),
            NodeKind::ConstTensor { value } => {
                j.data = Some(value.0.data().iter().map(|v| Num::from(*v)).collect())
            }
            NodeKind::Delta { left, right } => {
                j.left = Some(left.clone());
                j.right = Some(right.clone());
            }
            NodeKind::Add { .. } => {}
            NodeKind::Einsum { s1, s2, s3, .. } => {
                j.s1 = Some(s1.clone());
                j.s2 = Some(s2.clone());
                j.s3 = Some(s3.clone());
            }
            NodeKind::ElemUnary { op, .. } | NodeKind::GenUnary { op, .. } => {
                j.op_name = Some(op.clone())
            }
        }
        nodes.push(j);
    }
    let doc = JsonDag {
        inputs: dag
            .inputs()
            .iter()
            .map(|(n, s)| JsonInput {
                name: n.clone(),
                index_set: index_strings(s),
            })
            .collect(),
        nodes,
        outputs: dag
            .outputs()
            .iter()
            .map(|(n, id)| JsonOutput {
                name: n.clone(),
                id: id.0,
            })
            .collect(),
        compression,
    };
    serde_json::to_string_pretty(&doc).expect("dag documents serialize")
}

/// Parse a DAG document; returns the DAG and the compression record if any.
pub fn dag_from_json(text: &str) -> Result<(ExprDag, Option<serde_json::Value>)> {
    let doc: JsonDag = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let mut dag = ExprDag::new();
    for inp in &doc.inputs {
        let shape = parse_index_strings(&inp.index_set)?;
        dag.declare_input(&inp.name, shape)?;
    }
    let mut ids: HashMap<u32, NodeId> = HashMap::new();
    let missing = |what: &str, id: u32| Error::Format(format!("node {id} lacks `{what}`"));
    for n in &doc.nodes {
        let shape = parse_index_strings(&n.index_set)?;
        let child = |k: usize| -> Result<NodeId> {
            let c = n
                .children
                .get(k)
                .ok_or_else(|| Error::Format(format!("node {} lacks child {k}", n.id)))?;
            ids.get(c)
                .copied()
                .ok_or_else(|| Error::Format(format!("node {} refers forward to {c}", n.id)))
        };
        let kind = match n.kind.as_str() {
            "variable" => NodeKind::Variable {
                name: n.name.clone().ok_or_else(|| missing("name", n.id))?,
            },
            "scalar" => NodeKind::ConstScalar {
                bits: n.value.as_ref().ok_or_else(|| missing("value", n.id))?.value()?.to_bits(),
            },
            "tensor" => {
                let data = n
                    .data
                    .as_ref()
                    .ok_or_else(|| missing("data", n.id))?
                    .iter()
                    .map(Num::value)
                    .collect::<Result<Vec<_>>>()?;
                NodeKind::ConstTensor {
                    value: TensorConst(Arc::new(DenseTensor::new(shape.dims(), data)?)),
                }
            }
            "delta" => NodeKind::Delta {
                left: n.left.clone().ok_or_else(|| missing("left", n.id))?,
                right: n.right.clone().ok_or_else(|| missing("right", n.id))?,
            },
            "add" => NodeKind::Add {
                left: child(0)?,
                right: child(1)?,
            },
            "einsum" => NodeKind::Einsum {
                s1: n.s1.clone().ok_or_else(|| missing("s1", n.id))?,
                s2: n.s2.clone().ok_or_else(|| missing("s2", n.id))?,
                s3: n.s3.clone().ok_or_else(|| missing("s3", n.id))?,
                left: child(0)?,
                right: child(1)?,
            },
            "elem" => NodeKind::ElemUnary {
                op: n.op_name.clone().ok_or_else(|| missing("op_name", n.id))?,
                child: child(0)?,
            },
            "general" => NodeKind::GenUnary {
                op: n.op_name.clone().ok_or_else(|| missing("op_name", n.id))?,
                child: child(0)?,
            },
            other => return Err(Error::Format(format!("unknown node kind `{other}`"))),
        };
        let id = dag.insert_checked(Node { kind, shape })?;
        ids.insert(n.id, id);
    }
    for o in &doc.outputs {
        let id = ids
            .get(&o.id)
            .copied()
            .ok_or_else(|| Error::Format(format!("output `{}` refers to unknown node", o.name)))?;
        dag.set_output(o.name.clone(), id);
    }
    Ok((dag, doc.compression))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    #[test]
    fn round_trip_is_exact() {
        let src = "var X : ij (4,3)\nvar w : j (3)\nX' * (elem_inverse(exp(X*w) + 1) .* exp(X*w))\nz = tensor(ab; 2,2; [0.1, -0.0, 1e-300, 3.0]) + delta(a|b; 2)";
        let dag = parse(src).unwrap();
        let text = dag_to_json(&dag, None);
        let (back, comp) = dag_from_json(&text).unwrap();
        assert!(comp.is_none());
        assert!(dag.compacted().structurally_equal(&back));
        assert_eq!(text, dag_to_json(&back, None));
    }

    #[test]
    fn non_finite_values_survive() {
        let mut dag = ExprDag::new();
        let a = dag.scalar(f64::NAN);
        let b = dag.scalar(f64::NEG_INFINITY);
        let s = dag.add(a, b).unwrap();
        dag.set_output("y", s);
        let (back, _) = dag_from_json(&dag_to_json(&dag, None)).unwrap();
        let y = back.output("y").unwrap();
        let NodeKind::Add { left, right } = back.kind(y) else { panic!() };
        assert!(back.kind(*left).scalar_value().unwrap().is_nan());
        assert_eq!(back.kind(*right).scalar_value(), Some(f64::NEG_INFINITY));
    }

    #[test]
    fn compression_block_is_kept() {
        let dag = parse("var x : i (2)\nx").unwrap();
        let block = serde_json::json!({"core_id": 0, "sig": [["i"], [], ["i"]], "delta_pairs": [["i", "k"]]});
        let text = dag_to_json(&dag, Some(block.clone()));
        assert_eq!(dag_from_json(&text).unwrap().1, Some(block));
    }

    #[test]
    fn malformed_documents_are_rejected() {
        assert!(matches!(dag_from_json("{"), Err(Error::Format(_))));
        let bad = r#"{"inputs":[],"nodes":[{"id":0,"kind":"add","index_set":[],"children":[5,6]}],"outputs":[]}"#;
        assert!(dag_from_json(bad).is_err());
    }
}
