//! Dense evaluation of expression DAGs, FLOP accounting, and the
//! finite-difference oracle.
//!
//! FLOP model for `A *_(s1,s2,s3) B`: one multiply per assignment of
//! `s1 ∪ s2`, and `|s1 ∪ s2| - |s3|` additions (entry counts). Additions of
//! two tensors cost one add per entry; element-wise unary ops cost one
//! "unary" op per entry.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{ExprDag, NodeId, NodeKind};
use crate::kernel;
use crate::registry::{self, UnaryKind};
use crate::tensor::DenseTensor;

/// Variable bindings.
#[derive(Debug, Clone, Default)]
pub struct Environment {
    values: HashMap<String, DenseTensor>,
}

impl Environment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: DenseTensor) {
        self.values.insert(name.into(), t);
    }

    pub fn with(mut self, name: impl Into<String>, t: DenseTensor) -> Self {
        self.insert(name, t);
        self
    }

    pub fn get(&self, name: &str) -> Option<&DenseTensor> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DenseTensor> {
        self.values.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.values.keys()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Kernel {
    #[default]
    Reference,
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NodeFlops {
    pub multiplies: u64,
    pub adds: u64,
    pub unary: u64,
}

impl NodeFlops {
    pub fn total(&self) -> u64 {
        self.multiplies + self.adds + self.unary
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlopReport {
    pub multiplies: u64,
    pub adds: u64,
    pub unary: u64,
    pub per_node: Vec<(NodeId, NodeFlops)>,
}

impl FlopReport {
    pub fn total(&self) -> u64 {
        self.multiplies + self.adds + self.unary
    }
}

/// Cost of computing one node from its children under the FLOP model.
pub fn node_flops(dag: &ExprDag, id: NodeId) -> NodeFlops {
    let node = dag.node(id);
    match &node.kind {
        NodeKind::Einsum {
            s1, left, right, s2, ..
        } => {
            let mut seen: Vec<&String> = Vec::new();
            let mut mult: u64 = 1;
            for (labels, child) in [(s1, *left), (s2, *right)] {
                for (l, d) in labels.iter().zip(dag.shape(child).dims()) {
                    if !seen.contains(&l) {
                        seen.push(l);
                        mult *= d as u64;
                    }
                }
            }
            let out = node.shape.size() as u64;
            NodeFlops {
                multiplies: mult,
                adds: mult - out,
                unary: 0,
            }
        }
        NodeKind::Add { .. } => NodeFlops {
            adds: node.shape.size() as u64,
            ..Default::default()
        },
        NodeKind::ElemUnary { .. } => NodeFlops {
            unary: node.shape.size() as u64,
            ..Default::default()
        },
        NodeKind::GenUnary { op, child } => {
            let cost = match registry::lookup(op).map(|o| o.kind) {
                Ok(UnaryKind::General { cost, .. }) => cost(dag.shape(*child).size()),
                _ => 0,
            };
            NodeFlops {
                unary: cost,
                ..Default::default()
            }
        }
        _ => NodeFlops::default(),
    }
}

/// FLOPs of evaluating every node reachable from `roots` once.
pub fn flop_report(dag: &ExprDag, roots: &[NodeId]) -> FlopReport {
    let mut rep = FlopReport::default();
    for id in dag.reachable(roots) {
        let f = node_flops(dag, id);
        rep.multiplies += f.multiplies;
        rep.adds += f.adds;
        rep.unary += f.unary;
        if f.total() > 0 {
            rep.per_node.push((id, f));
        }
    }
    rep
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub values: BTreeMap<String, DenseTensor>,
    pub flops: FlopReport,
}

/// Memoized evaluator over one DAG and one environment.
pub struct Evaluator<'a> {
    dag: &'a ExprDag,
    env: &'a Environment,
    kernel: Kernel,
    memo: HashMap<NodeId, Arc<DenseTensor>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(dag: &'a ExprDag, env: &'a Environment) -> Self {
        Evaluator {
            dag,
            env,
            kernel: Kernel::Reference,
            memo: HashMap::new(),
        }
    }

    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn eval(&mut self, root: NodeId) -> Result<Arc<DenseTensor>> {
        for id in self.dag.reachable(&[root]) {
            if self.memo.contains_key(&id) {
                continue;
            }
            let v = self.compute(id)?;
            self.memo.insert(id, Arc::new(v));
        }
        Ok(self.memo[&root].clone())
    }

    fn get(&self, id: NodeId) -> &DenseTensor {
        &self.memo[&id]
    }

    fn compute(&self, id: NodeId) -> Result<DenseTensor> {
        let node = self.dag.node(id);
        Ok(match &node.kind {
            NodeKind::Variable { name } => {
                let t = self
                    .env
                    .get(name)
                    .ok_or_else(|| Error::MissingBinding(name.clone()))?;
                if t.dims() != node.shape.dims().as_slice() {
                    return Err(Error::DimMismatch(format!(
                        "`{name}` bound to {:?}, declared {}",
                        t.dims(),
                        node.shape
                    )));
                }
                t.clone()
            }
            NodeKind::ConstScalar { bits } => DenseTensor::scalar(f64::from_bits(*bits)),
            NodeKind::ConstTensor { value } => (*value.0).clone(),
            NodeKind::Delta { left, .. } => {
                DenseTensor::delta(&node.shape.dims()[..left.len()])
            }
            NodeKind::Add { left, right } => {
                self.get(*left).zip_with(self.get(*right), |a, b| a + b)?
            }
            NodeKind::Einsum {
                s1,
                s2,
                s3,
                left,
                right,
            } => {
                let (a, b) = (self.get(*left), self.get(*right));
                match self.kernel {
                    Kernel::Reference => kernel::contract_reference(a, s1, b, s2, s3),
                    Kernel::Blocked => kernel::contract_blocked(a, s1, b, s2, s3),
                }
            }
            NodeKind::ElemUnary { op, child } => match registry::lookup(op)?.kind {
                UnaryKind::Elementwise { value, .. } => self.get(*child).map(value),
                UnaryKind::General { .. } => unreachable!("validated at construction"),
            },
            NodeKind::GenUnary { op, child } => match registry::lookup(op)?.kind {
                UnaryKind::General { value, .. } => value(self.get(*child)),
                UnaryKind::Elementwise { .. } => unreachable!("validated at construction"),
            },
        })
    }
}

/// Evaluate every output of `dag`.
pub fn evaluate(dag: &ExprDag, env: &Environment) -> Result<Evaluation> {
    evaluate_with(dag, env, Kernel::Reference)
}

pub fn evaluate_with(dag: &ExprDag, env: &Environment, kernel: Kernel) -> Result<Evaluation> {
    let mut ev = Evaluator::new(dag, env).with_kernel(kernel);
    let mut values = BTreeMap::new();
    for (name, id) in dag.outputs() {
        values.insert(name.clone(), (*ev.eval(*id)?).clone());
    }
    let roots: Vec<NodeId> = dag.outputs().iter().map(|(_, id)| *id).collect();
    Ok(Evaluation {
        values,
        flops: flop_report(dag, &roots),
    })
}

/// Evaluate a single node.
pub fn evaluate_node(dag: &ExprDag, env: &Environment, id: NodeId) -> Result<DenseTensor> {
    Ok((*Evaluator::new(dag, env).eval(id)?).clone())
}

/// `sqrt(sum of squares)`: Euclidean for vectors, Frobenius for matrices.
pub fn tensor_norm(t: &DenseTensor) -> f64 {
    t.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `D *_(s1 s2, s2, s1) h` where `h` spans the trailing axes of `D`.
pub fn inner_product(d: &DenseTensor, h: &DenseTensor) -> Result<DenseTensor> {
    let split = d.rank().checked_sub(h.rank()).ok_or_else(|| {
        Error::DimMismatch(format!("{:?} cannot absorb {:?}", d.dims(), h.dims()))
    })?;
    if &d.dims()[split..] != h.dims() {
        return Err(Error::DimMismatch(format!(
            "trailing axes {:?} vs {:?}",
            &d.dims()[split..],
            h.dims()
        )));
    }
    let labels: Vec<String> = (0..d.rank()).map(|a| format!("a{a}")).collect();
    Ok(kernel::contract_reference(
        d,
        &labels,
        h,
        &labels[split..],
        &labels[..split],
    ))
}

fn output_value(dag: &ExprDag, env: &Environment, output: NodeId) -> Result<DenseTensor> {
    evaluate_node(dag, env, output)
}

fn wrt_dims(dag: &ExprDag, env: &Environment, wrt: &str) -> Result<Vec<usize>> {
    if dag.input_shape(wrt).is_none() {
        return Err(Error::UnknownVariable(wrt.to_string()));
    }
    env.get(wrt)
        .map(|t| t.dims().to_vec())
        .ok_or_else(|| Error::MissingBinding(wrt.to_string()))
}

/// Central-difference approximation of the full derivative tensor of
/// `output` with respect to `wrt`; axes are the output's followed by the variable's.
pub fn finite_difference(
    dag: &ExprDag,
    output: NodeId,
    wrt: &str,
    env: &Environment,
    h: f64,
) -> Result<DenseTensor> {
    let xdims = wrt_dims(dag, env, wrt)?;
    let nx: usize = xdims.iter().product();
    let ydims = dag.shape(output).dims();
    let ny: usize = ydims.iter().product();
    let mut out = vec![0.0; ny * nx];
    let mut work = env.clone();
    for e in 0..nx {
        let base = env.get(wrt).unwrap().data()[e];
        work.get_mut(wrt).unwrap().data_mut()[e] = base + h;
        let fp = output_value(dag, &work, output)?;
        work.get_mut(wrt).unwrap().data_mut()[e] = base - h;
        let fm = output_value(dag, &work, output)?;
        work.get_mut(wrt).unwrap().data_mut()[e] = base;
        for (y, (p, m)) in fp.data().iter().zip(fm.data()).enumerate() {
            out[y * nx + e] = (p - m) / (2.0 * h);
        }
    }
    DenseTensor::new([ydims, xdims].concat(), out)
}

/// Second-order central differences: entry `(y, a, b)` approximates
/// `d^2 f_y / dx_a dx_b` from four evaluations.
pub fn finite_difference_second(
    dag: &ExprDag,
    output: NodeId,
    wrt: &str,
    env: &Environment,
    h: f64,
) -> Result<DenseTensor> {
    let xdims = wrt_dims(dag, env, wrt)?;
    let nx: usize = xdims.iter().product();
    let ydims = dag.shape(output).dims();
    let ny: usize = ydims.iter().product();
    let mut out = vec![0.0; ny * nx * nx];
    let mut work = env.clone();
    let x0 = env.get(wrt).unwrap().data().to_vec();
    let probe = |work: &mut Environment, a: usize, da: f64, b: usize, db: f64| {
        let d = work.get_mut(wrt).unwrap().data_mut();
        d.copy_from_slice(&x0);
        d[a] += da;
        d[b] += db;
        output_value(dag, work, output)
    };
    for a in 0..nx {
        for b in a..nx {
            let pp = probe(&mut work, a, h, b, h)?;
            let pm = probe(&mut work, a, h, b, -h)?;
            let mp = probe(&mut work, a, -h, b, h)?;
            let mm = probe(&mut work, a, -h, b, -h)?;
            for y in 0..ny {
                let v = (pp.data()[y] - pm.data()[y] - mp.data()[y] + mm.data()[y])
                    / (4.0 * h * h);
                out[y * nx * nx + a * nx + b] = v;
                out[y * nx * nx + b * nx + a] = v;
            }
        }
    }
    DenseTensor::new([ydims.clone(), xdims.clone(), xdims].concat(), out)
}

pub const FD_STEP_FIRST: f64 = 1e-5;
pub const FD_STEP_SECOND: f64 = 1e-3;
