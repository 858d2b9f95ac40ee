//! Unary operator registry: values and derivative constructors.
//!
//! Element-wise ops give their derivative as another element-wise expression
//! `f'(A)` over the same index set. General ops produce a derivative tensor
//! over `range ++ domain`.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::expr::{ExprDag, NodeId};
use crate::index::IndexSet;
use crate::tensor::DenseTensor;

/// Derivative of an element-wise op: `(dag, argument, node itself) -> f'(argument)`.
/// `None` means the derivative is identically zero.
pub type ElemDerivative = fn(&mut ExprDag, NodeId, NodeId) -> Result<Option<NodeId>>;

/// Derivative of a general op: `(dag, argument, node itself) -> f'(argument)`
/// with positional index set `range ++ domain`.
pub type GenDerivative = fn(&mut ExprDag, NodeId, NodeId) -> Result<NodeId>;

#[derive(Clone, Copy)]
pub enum UnaryKind {
    Elementwise {
        value: fn(f64) -> f64,
        derivative: ElemDerivative,
    },
    General {
        range: fn(&IndexSet) -> Result<IndexSet>,
        value: fn(&DenseTensor) -> DenseTensor,
        derivative: GenDerivative,
        /// Scalar operations per evaluation, given the argument size.
        cost: fn(usize) -> u64,
    },
}

#[derive(Clone, Copy)]
pub struct UnaryOp {
    pub name: &'static str,
    pub kind: UnaryKind,
}

impl UnaryOp {
    pub fn is_elementwise(&self) -> bool {
        matches!(self.kind, UnaryKind::Elementwise { .. })
    }
}

pub struct UnaryOpRegistry {
    entries: BTreeMap<&'static str, UnaryOp>,
}

impl UnaryOpRegistry {
    pub fn builtin() -> &'static UnaryOpRegistry {
        static REG: OnceLock<UnaryOpRegistry> = OnceLock::new();
        REG.get_or_init(|| {
            let ops = [
                elementwise("exp", f64::exp, d_exp),
                elementwise("log", f64::ln, d_log),
                elementwise("relu", relu, d_relu),
                elementwise("step", step, d_zero),
                elementwise("elem_inverse", |x| 1.0 / x, d_inverse),
                elementwise("elem_square", |x| x * x, d_square),
                UnaryOp {
                    name: "softmax",
                    kind: UnaryKind::General {
                        range: softmax_range,
                        value: softmax,
                        derivative: d_softmax,
                        cost: |n| 3 * n as u64,
                    },
                },
            ];
            UnaryOpRegistry {
                entries: ops.into_iter().map(|op| (op.name, op)).collect(),
            }
        })
    }

    pub fn get(&self, name: &str) -> Option<&UnaryOp> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}

pub fn lookup(name: &str) -> Result<&'static UnaryOp> {
    UnaryOpRegistry::builtin()
        .get(name)
        .ok_or_else(|| Error::UnregisteredUnaryOp(name.to_string()))
}

pub fn is_registered(name: &str) -> bool {
    UnaryOpRegistry::builtin().get(name).is_some()
}

fn elementwise(name: &'static str, value: fn(f64) -> f64, derivative: ElemDerivative) -> UnaryOp {
    UnaryOp {
        name,
        kind: UnaryKind::Elementwise { value, derivative },
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

// relu'(0) := 0
fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn d_exp(_: &mut ExprDag, _a: NodeId, this: NodeId) -> Result<Option<NodeId>> {
    Ok(Some(this))
}

fn d_log(dag: &mut ExprDag, a: NodeId, _: NodeId) -> Result<Option<NodeId>> {
    dag.elem("elem_inverse", a).map(Some)
}

fn d_relu(dag: &mut ExprDag, a: NodeId, _: NodeId) -> Result<Option<NodeId>> {
    dag.elem("step", a).map(Some)
}

fn d_zero(_: &mut ExprDag, _: NodeId, _: NodeId) -> Result<Option<NodeId>> {
    Ok(None)
}

// (1/x)' = -(1/x)^2
fn d_inverse(dag: &mut ExprDag, _a: NodeId, this: NodeId) -> Result<Option<NodeId>> {
    let sq = dag.elem("elem_square", this)?;
    dag.neg(sq).map(Some)
}

fn d_square(dag: &mut ExprDag, a: NodeId, _: NodeId) -> Result<Option<NodeId>> {
    dag.scale(2.0, a).map(Some)
}

fn softmax_range(domain: &IndexSet) -> Result<IndexSet> {
    if domain.rank() != 1 {
        return Err(Error::DimMismatch(format!(
            "softmax acts on vectors, got {domain}"
        )));
    }
    Ok(domain.clone())
}

fn softmax(x: &DenseTensor) -> DenseTensor {
    let m = x.data().iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = x.map(|v| (v - m).exp());
    let s: f64 = e.data().iter().sum();
    e.map(|v| v / s)
}

// softmax'(a) = diag(p) - p p^T with p = softmax(a)
fn d_softmax(dag: &mut ExprDag, _a: NodeId, this: NodeId) -> Result<NodeId> {
    let n = dag.shape(this).dims()[0];
    let r = IndexSet::from_parts(&["r"], &[n])?;
    let d = IndexSet::from_parts(&["d"], &[n])?;
    let delta = dag.delta(r, d)?;
    let diag = dag.einsum(this, &["r"], delta, &["r", "d"], &["r", "d"])?;
    let outer = dag.einsum(this, &["r"], this, &["d"], &["r", "d"])?;
    let neg = dag.neg(outer)?;
    dag.add(diag, neg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_present() {
        for name in ["exp", "log", "relu", "elem_inverse", "elem_square", "softmax"] {
            assert!(is_registered(name), "{name}");
        }
        assert!(matches!(lookup("tanh"), Err(Error::UnregisteredUnaryOp(_))));
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        assert_eq!(step(0.0), 0.0);
        assert_eq!(step(1e-12), 1.0);
        assert_eq!(relu(-3.0), 0.0);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = DenseTensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = a.map(|v| v + 100.0);
        let (pa, pb) = (softmax(&a), softmax(&b));
        for (x, y) in pa.data().iter().zip(pb.data()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((pa.data().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
