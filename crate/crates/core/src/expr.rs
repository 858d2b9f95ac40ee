//! Hash-consed tensor expression DAGs.
//!
//! Nodes live in an append-only arena owned by [`ExprDag`]; children always
//! precede their parents, so arena order is a topological order. Structurally
//! identical nodes are stored once, so node identity is [`NodeId`] equality.
//!
//! Axis labels are positional: an einsum node names the axes of its operands
//! with its own label lists, and every node carries its result index set.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{join_labels, Index, IndexSet, LabelPool};
use crate::registry::{self, UnaryKind};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Constant tensor payload, compared and hashed by bit pattern.
#[derive(Debug, Clone)]
pub struct TensorConst(pub Arc<DenseTensor>);

impl PartialEq for TensorConst {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.dims() == other.0.dims()
                && self
                    .0
                    .data()
                    .iter()
                    .zip(other.0.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits()))
    }
}

impl Eq for TensorConst {}

impl Hash for TensorConst {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.dims().hash(state);
        for v in self.0.data() {
            v.to_bits().hash(state);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Variable {
        name: String,
    },
    /// Stored as raw bits so the node can be hashed.
    ConstScalar {
        bits: u64,
    },
    ConstTensor {
        value: TensorConst,
    },
    /// Unit tensor pairing `left[a]` with `right[a]`.
    Delta {
        left: Vec<String>,
        right: Vec<String>,
    },
    Add {
        left: NodeId,
        right: NodeId,
    },
    /// `C[s3] = sum over (s1 ∪ s2) \ s3 of A[s1] * B[s2]`.
    Einsum {
        s1: Vec<String>,
        s2: Vec<String>,
        s3: Vec<String>,
        left: NodeId,
        right: NodeId,
    },
    ElemUnary {
        op: String,
        child: NodeId,
    },
    GenUnary {
        op: String,
        child: NodeId,
    },
}

impl NodeKind {
    pub fn children(&self) -> Vec<NodeId> {
        match self {
            NodeKind::Add { left, right } | NodeKind::Einsum { left, right, .. } => {
                vec![*left, *right]
            }
            NodeKind::ElemUnary { child, .. } | NodeKind::GenUnary { child, .. } => vec![*child],
            _ => vec![],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Variable { .. } => "variable",
            NodeKind::ConstScalar { .. } => "scalar",
            NodeKind::ConstTensor { .. } => "tensor",
            NodeKind::Delta { .. } => "delta",
            NodeKind::Add { .. } => "add",
            NodeKind::Einsum { .. } => "einsum",
            NodeKind::ElemUnary { .. } => "elem",
            NodeKind::GenUnary { .. } => "general",
        }
    }

    pub fn scalar_value(&self) -> Option<f64> {
        match self {
            NodeKind::ConstScalar { bits } => Some(f64::from_bits(*bits)),
            _ => None,
        }
    }

    pub fn is_delta(&self) -> bool {
        matches!(self, NodeKind::Delta { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Node {
    pub kind: NodeKind,
    pub shape: IndexSet,
}

impl Node {
    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    /// Short human-readable label used by DOT export and diagnostics.
    pub fn describe(&self) -> String {
        match &self.kind {
            NodeKind::Variable { name } => name.clone(),
            NodeKind::ConstScalar { bits } => format!("{:?}", f64::from_bits(*bits)),
            NodeKind::ConstTensor { value } => {
                let d = value.0.data();
                if !d.is_empty() && d.iter().all(|v| v.to_bits() == d[0].to_bits()) {
                    format!("const {:?}", d[0])
                } else {
                    "tensor".to_string()
                }
            }
            NodeKind::Delta { left, right } => {
                format!("delta({}|{})", join_labels(left), join_labels(right))
            }
            NodeKind::Add { .. } => "+".to_string(),
            NodeKind::Einsum { s1, s2, s3, .. } => format!(
                "*({},{}->{})",
                join_labels(s1),
                join_labels(s2),
                join_labels(s3)
            ),
            NodeKind::ElemUnary { op, .. } | NodeKind::GenUnary { op, .. } => op.clone(),
        }
    }
}

/// Expression DAG with named inputs and outputs.
#[derive(Debug, Clone, Default)]
pub struct ExprDag {
    nodes: Vec<Node>,
    interned: HashMap<Node, NodeId>,
    inputs: Vec<(String, IndexSet)>,
    outputs: Vec<(String, NodeId)>,
    issued: HashSet<String>,
}

impl ExprDag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn kind(&self, id: NodeId) -> &NodeKind {
        &self.nodes[id.index()].kind
    }

    pub fn shape(&self, id: NodeId) -> &IndexSet {
        &self.nodes[id.index()].shape
    }

    pub fn rank(&self, id: NodeId) -> usize {
        self.shape(id).rank()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (NodeId(i as u32), n))
    }

    pub fn inputs(&self) -> &[(String, IndexSet)] {
        &self.inputs
    }

    pub fn input_shape(&self, name: &str) -> Option<&IndexSet> {
        self.inputs.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn outputs(&self) -> &[(String, NodeId)] {
        &self.outputs
    }

    pub fn output(&self, name: &str) -> Result<NodeId> {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| Error::UnknownOutput(name.to_string()))
    }

    /// Designate (or re-point) a named output.
    pub fn set_output(&mut self, name: impl Into<String>, id: NodeId) {
        let name = name.into();
        if let Some(slot) = self.outputs.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = id;
        } else {
            self.outputs.push((name, id));
        }
    }

    pub fn clear_outputs(&mut self) {
        self.outputs.clear();
    }

    fn intern(&mut self, node: Node) -> NodeId {
        if let Some(&id) = self.interned.get(&node) {
            return id;
        }
        let id = NodeId(self.nodes.len() as u32);
        self.interned.insert(node.clone(), id);
        self.nodes.push(node);
        id
    }

    /// Look up a node without inserting it.
    pub fn find(&self, node: &Node) -> Option<NodeId> {
        self.interned.get(node).copied()
    }

    /// Declare an input variable. Redeclaring a name requires equal extents;
    /// the labels of a redeclaration may differ (alpha-renamed views).
    pub fn variable(&mut self, name: &str, shape: IndexSet) -> Result<NodeId> {
        match self.input_shape(name) {
            Some(prev) if prev.dims() != shape.dims() => {
                return Err(Error::DimMismatch(format!(
                    "variable `{name}` declared with {prev} and {shape}"
                )))
            }
            Some(_) => {}
            None => self.inputs.push((name.to_string(), shape.clone())),
        }
        Ok(self.intern(Node {
            kind: NodeKind::Variable {
                name: name.to_string(),
            },
            shape,
        }))
    }

    /// Register an input without creating a node for it.
    pub fn declare_input(&mut self, name: &str, shape: IndexSet) -> Result<()> {
        match self.input_shape(name) {
            Some(prev) if prev.dims() != shape.dims() => Err(Error::DimMismatch(format!(
                "variable `{name}` declared with {prev} and {shape}"
            ))),
            Some(_) => Ok(()),
            None => {
                self.inputs.push((name.to_string(), shape));
                Ok(())
            }
        }
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.intern(Node {
            kind: NodeKind::ConstScalar { bits: v.to_bits() },
            shape: IndexSet::empty(),
        })
    }

    pub fn tensor(&mut self, shape: IndexSet, value: DenseTensor) -> Result<NodeId> {
        if shape.dims() != value.dims() {
            return Err(Error::DimMismatch(format!(
                "constant tensor {:?} under index set {shape}",
                value.dims()
            )));
        }
        if shape.is_empty() {
            return Ok(self.scalar(value.data()[0]));
        }
        Ok(self.intern(Node {
            kind: NodeKind::ConstTensor {
                value: TensorConst(Arc::new(value)),
            },
            shape,
        }))
    }

    /// Constant tensor with every entry equal to `v`.
    pub fn filled(&mut self, shape: IndexSet, v: f64) -> NodeId {
        let t = DenseTensor::filled(&shape.dims(), v);
        self.tensor(shape, t).expect("extents agree by construction")
    }

    pub fn delta(&mut self, left: IndexSet, right: IndexSet) -> Result<NodeId> {
        if left.dims() != right.dims() {
            return Err(Error::DimMismatch(format!(
                "delta pairs {left} with {right}"
            )));
        }
        let shape = left.concat(&right)?;
        Ok(self.intern(Node {
            kind: NodeKind::Delta {
                left: left.labels(),
                right: right.labels(),
            },
            shape,
        }))
    }

    pub fn add(&mut self, left: NodeId, right: NodeId) -> Result<NodeId> {
        let (a, b) = (self.shape(left), self.shape(right));
        if a.dims() != b.dims() {
            return Err(Error::DimMismatch(format!("cannot add {a} and {b}")));
        }
        let shape = a.clone();
        Ok(self.intern(Node {
            kind: NodeKind::Add { left, right },
            shape,
        }))
    }

    /// Generic multiplication `left *_(s1, s2, s3) right` with full index sets.
    pub fn make_einsum(
        &mut self,
        left: NodeId,
        s1: &IndexSet,
        right: NodeId,
        s2: &IndexSet,
        s3: &IndexSet,
    ) -> Result<NodeId> {
        for (side, child) in [(s1, left), (s2, right)] {
            if side.dims() != self.shape(child).dims() {
                return Err(Error::DimMismatch(format!(
                    "operand of shape {} labelled {side}",
                    self.shape(child)
                )));
            }
        }
        let union = s1.union(s2)?;
        for ix in s3 {
            match union.dim_of(&ix.label) {
                None => return Err(Error::BadOutputIndex(ix.label.clone())),
                Some(d) if d != ix.dim => {
                    return Err(Error::DimMismatch(format!(
                        "output index `{}` has extent {} but operands use {}",
                        ix.label, ix.dim, d
                    )))
                }
                _ => {}
            }
        }
        self.einsum(left, &s1.labels(), right, &s2.labels(), &s3.labels())
    }

    /// Generic multiplication with label lists; extents come from the operands.
    pub fn einsum<S: AsRef<str>>(
        &mut self,
        left: NodeId,
        s1: &[S],
        right: NodeId,
        s2: &[S],
        s3: &[S],
    ) -> Result<NodeId> {
        let own = |v: &[S]| v.iter().map(|s| s.as_ref().to_string()).collect::<Vec<_>>();
        let (s1, s2, s3) = (own(s1), own(s2), own(s3));
        let a = self.shape(left).relabeled(&s1)?;
        let b = self.shape(right).relabeled(&s2)?;
        let union = a.union(&b)?;
        let mut out = Vec::with_capacity(s3.len());
        for l in &s3 {
            let dim = union
                .dim_of(l)
                .ok_or_else(|| Error::BadOutputIndex(l.clone()))?;
            out.push(Index {
                label: l.clone(),
                dim,
            });
        }
        let shape = IndexSet::new(out)?;
        Ok(self.intern(Node {
            kind: NodeKind::Einsum {
                s1,
                s2,
                s3,
                left,
                right,
            },
            shape,
        }))
    }

    pub fn elem(&mut self, op: &str, child: NodeId) -> Result<NodeId> {
        match registry::lookup(op)?.kind {
            UnaryKind::Elementwise { .. } => {}
            UnaryKind::General { .. } => {
                return Err(Error::InvalidNode(format!(
                    "`{op}` is a general unary function"
                )))
            }
        }
        let shape = self.shape(child).clone();
        Ok(self.intern(Node {
            kind: NodeKind::ElemUnary {
                op: op.to_string(),
                child,
            },
            shape,
        }))
    }

    pub fn gen_unary(&mut self, op: &str, child: NodeId) -> Result<NodeId> {
        let entry = registry::lookup(op)?;
        let shape = match entry.kind {
            UnaryKind::General { range, .. } => range(self.shape(child))?,
            UnaryKind::Elementwise { .. } => {
                return Err(Error::InvalidNode(format!(
                    "`{op}` is an element-wise function"
                )))
            }
        };
        Ok(self.intern(Node {
            kind: NodeKind::GenUnary {
                op: op.to_string(),
                child,
            },
            shape,
        }))
    }

    /// Apply a registered unary op of either kind.
    pub fn unary(&mut self, op: &str, child: NodeId) -> Result<NodeId> {
        match registry::lookup(op)?.kind {
            UnaryKind::Elementwise { .. } => self.elem(op, child),
            UnaryKind::General { .. } => self.gen_unary(op, child),
        }
    }

    /// `c * node` as an einsum with a scalar operand.
    pub fn scale(&mut self, c: f64, node: NodeId) -> Result<NodeId> {
        let s = self.scalar(c);
        let labels = self.shape(node).labels();
        self.einsum(s, &[] as &[String], node, &labels, &labels)
    }

    pub fn neg(&mut self, node: NodeId) -> Result<NodeId> {
        self.scale(-1.0, node)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.neg(b)?;
        self.add(a, nb)
    }

    /// Sum of all entries.
    pub fn sum_all(&mut self, node: NodeId) -> Result<NodeId> {
        let one = self.scalar(1.0);
        let labels = self.shape(node).labels();
        self.einsum(node, &labels, one, &[], &[])
    }

    pub fn infer_shape(&self, id: NodeId) -> IndexSet {
        self.shape(id).clone()
    }

    /// Node ids reachable from `roots`, in topological (arena) order.
    pub fn reachable(&self, roots: &[NodeId]) -> Vec<NodeId> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<NodeId> = roots.to_vec();
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id.index()], true) {
                continue;
            }
            stack.extend(self.kind(id).children());
        }
        seen.iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| NodeId(i as u32))
            .collect()
    }

    /// Number of nodes reachable from the outputs.
    pub fn live_count(&self) -> usize {
        let roots: Vec<_> = self.outputs.iter().map(|(_, id)| *id).collect();
        self.reachable(&roots).len()
    }

    /// Every label mentioned anywhere in the DAG.
    pub fn all_labels(&self) -> HashSet<String> {
        let mut out: HashSet<String> = self.issued.clone();
        for n in &self.nodes {
            out.extend(n.shape.labels());
            match &n.kind {
                NodeKind::Einsum { s1, s2, s3, .. } => {
                    out.extend(s1.iter().chain(s2).chain(s3).cloned())
                }
                NodeKind::Delta { left, right } => out.extend(left.iter().chain(right).cloned()),
                _ => {}
            }
        }
        for (_, s) in &self.inputs {
            out.extend(s.labels());
        }
        out
    }

    /// An index whose label occurs nowhere in the DAG and was never issued before.
    pub fn fresh_index(&mut self, dim: usize) -> Index {
        let mut pool = LabelPool::avoiding(self.all_labels());
        let label = pool.fresh();
        self.issued.insert(label.clone());
        Index { label, dim }
    }

    /// Fresh labels for a whole index set, keeping extents.
    pub fn fresh_like(&mut self, shape: &IndexSet) -> IndexSet {
        let v: Vec<Index> = shape.iter().map(|ix| self.fresh_index(ix.dim)).collect();
        IndexSet::new(v).expect("fresh labels are distinct")
    }

    /// Alpha-rename every label in the subtree of `id`.
    pub fn rename_indices(
        &mut self,
        id: NodeId,
        mapping: &HashMap<String, String>,
    ) -> Result<NodeId> {
        let sub = self.reachable(&[id]);
        let mut dims: HashMap<String, usize> = HashMap::new();
        for &n in &sub {
            let node = self.node(n);
            for ix in &node.shape {
                dims.insert(ix.label.clone(), ix.dim);
            }
            if let NodeKind::Einsum {
                s1,
                s2,
                left,
                right,
                ..
            } = &node.kind
            {
                for (labels, child) in [(s1, *left), (s2, *right)] {
                    for (l, d) in labels.iter().zip(self.shape(child).dims()) {
                        dims.insert(l.clone(), d);
                    }
                }
            }
        }
        let image = |l: &String| mapping.get(l).unwrap_or(l).clone();
        let mut hit: HashMap<String, String> = HashMap::new();
        for l in dims.keys() {
            let img = image(l);
            if let Some(prev) = hit.insert(img.clone(), l.clone()) {
                let (a, b) = (&dims[&prev], &dims[l]);
                if a != b {
                    return Err(Error::DimMismatch(format!(
                        "`{prev}` and `{l}` both map to `{img}` with extents {a} and {b}"
                    )));
                }
                return Err(Error::NonInjectiveRename(img));
            }
        }
        let map_vec = |v: &[String]| v.iter().map(image).collect::<Vec<_>>();
        let mut new_id: HashMap<NodeId, NodeId> = HashMap::new();
        for &n in &sub {
            let node = self.node(n).clone();
            let shape = node.shape.renamed(mapping)?;
            let nid = match node.kind {
                NodeKind::Variable { name } => self.variable(&name, shape)?,
                NodeKind::ConstScalar { bits } => self.scalar(f64::from_bits(bits)),
                NodeKind::ConstTensor { value } => self.tensor(shape, (*value.0).clone())?,
                NodeKind::Delta { left, right } => {
                    let l = IndexSet::from_parts(&map_vec(&left), &shape.dims()[..left.len()])?;
                    let r = IndexSet::from_parts(&map_vec(&right), &shape.dims()[left.len()..])?;
                    self.delta(l, r)?
                }
                NodeKind::Add { left, right } => self.add(new_id[&left], new_id[&right])?,
                NodeKind::Einsum {
                    s1,
                    s2,
                    s3,
                    left,
                    right,
                } => self.einsum(
                    new_id[&left],
                    &map_vec(&s1),
                    new_id[&right],
                    &map_vec(&s2),
                    &map_vec(&s3),
                )?,
                NodeKind::ElemUnary { op, child } => self.elem(&op, new_id[&child])?,
                NodeKind::GenUnary { op, child } => {
                    let c = new_id[&child];
                    let entry = registry::lookup(&op)?;
                    let UnaryKind::General { .. } = entry.kind else {
                        unreachable!("general node with element-wise op")
                    };
                    let node = Node {
                        kind: NodeKind::GenUnary { op, child: c },
                        shape,
                    };
                    self.intern(node)
                }
            };
            new_id.insert(n, nid);
        }
        Ok(new_id[&id])
    }

    /// Insert a node verbatim, after validating it against its children.
    /// Used by deserialization, which must reproduce labels exactly.
    pub fn insert_checked(&mut self, node: Node) -> Result<NodeId> {
        for c in node.kind.children() {
            if c.index() >= self.nodes.len() {
                return Err(Error::InvalidNode(format!("child {c} not yet defined")));
            }
        }
        let expected = match &node.kind {
            NodeKind::Variable { name } => {
                return self.variable(name, node.shape.clone());
            }
            NodeKind::ConstScalar { .. } => IndexSet::empty(),
            NodeKind::ConstTensor { value } => {
                if value.0.dims() != node.shape.dims().as_slice() {
                    return Err(Error::DimMismatch("constant payload".into()));
                }
                node.shape.clone()
            }
            NodeKind::Delta { left, right } => {
                let d = node.shape.dims();
                if left.len() + right.len() != d.len()
                    || d[..left.len()] != d[left.len()..]
                    || node.shape.labels() != [left.clone(), right.clone()].concat()
                {
                    return Err(Error::InvalidNode("malformed delta".into()));
                }
                node.shape.clone()
            }
            NodeKind::Add { left, .. } => {
                let id = self.add(*left, node.kind.children()[1])?;
                if self.shape(id) != &node.shape {
                    return Err(Error::InvalidNode("add shape".into()));
                }
                return Ok(id);
            }
            NodeKind::Einsum {
                s1,
                s2,
                s3,
                left,
                right,
            } => {
                let id = self.einsum(*left, s1, *right, s2, s3)?;
                return Ok(id);
            }
            NodeKind::ElemUnary { op, child } => {
                return self.elem(op, *child);
            }
            NodeKind::GenUnary { op, child } => {
                let entry = registry::lookup(op)?;
                let UnaryKind::General { range, .. } = entry.kind else {
                    return Err(Error::InvalidNode(format!("`{op}` is element-wise")));
                };
                let r = range(self.shape(*child))?;
                if r.dims() != node.shape.dims() {
                    return Err(Error::DimMismatch(format!("range of `{op}`")));
                }
                node.shape.clone()
            }
        };
        if expected != node.shape {
            return Err(Error::InvalidNode("shape does not match node".into()));
        }
        Ok(self.intern(node))
    }

    /// Insert a node of the given kind, inferring its shape from the
    /// children; leaves keep `shape`.
    pub fn rebuild(&mut self, kind: NodeKind, shape: &IndexSet) -> Result<NodeId> {
        match kind {
            NodeKind::Add { left, right } => self.add(left, right),
            NodeKind::Einsum {
                s1,
                s2,
                s3,
                left,
                right,
            } => self.einsum(left, &s1, right, &s2, &s3),
            NodeKind::ElemUnary { op, child } => self.elem(&op, child),
            NodeKind::GenUnary { op, child } => self.gen_unary(&op, child),
            leaf => self.insert_checked(Node {
                kind: leaf,
                shape: shape.clone(),
            }),
        }
    }

    /// Copy the subgraph of `roots` from `other` into `self`, returning the
    /// new ids of the roots.
    pub fn import(&mut self, other: &ExprDag, roots: &[NodeId]) -> Result<Vec<NodeId>> {
        let mut map: HashMap<NodeId, NodeId> = HashMap::new();
        for id in other.reachable(roots) {
            let mut node = other.node(id).clone();
            node.kind = remap_children(node.kind, &map);
            let nid = self.insert_checked(node)?;
            map.insert(id, nid);
        }
        Ok(roots.iter().map(|r| map[r]).collect())
    }

    /// A fresh DAG holding only what the outputs reach (plus all declared inputs).
    pub fn compacted(&self) -> ExprDag {
        let mut out = ExprDag::new();
        for (name, shape) in &self.inputs {
            out.inputs.push((name.clone(), shape.clone()));
        }
        out.issued = self.issued.clone();
        let roots: Vec<NodeId> = self.outputs.iter().map(|(_, id)| *id).collect();
        let new = out.import(self, &roots).expect("valid dag re-imports");
        for ((name, _), id) in self.outputs.iter().zip(new) {
            out.outputs.push((name.clone(), id));
        }
        out
    }

    /// Same outputs computing the same node structure, regardless of arena order.
    pub fn structurally_equal(&self, other: &ExprDag) -> bool {
        if self.outputs.len() != other.outputs.len() {
            return false;
        }
        let mut memo: HashMap<NodeId, NodeId> = HashMap::new();
        self.outputs
            .iter()
            .zip(&other.outputs)
            .all(|((na, a), (nb, b))| na == nb && self.same_node(*a, other, *b, &mut memo))
    }

    fn same_node(
        &self,
        a: NodeId,
        other: &ExprDag,
        b: NodeId,
        memo: &mut HashMap<NodeId, NodeId>,
    ) -> bool {
        if let Some(&m) = memo.get(&a) {
            return m == b;
        }
        let (x, y) = (self.node(a), other.node(b));
        if x.shape != y.shape {
            return false;
        }
        let (ca, cb) = (x.kind.children(), y.kind.children());
        if ca.len() != cb.len() {
            return false;
        }
        for (p, q) in ca.iter().zip(&cb) {
            if !self.same_node(*p, other, *q, memo) {
                return false;
            }
        }
        let map: HashMap<NodeId, NodeId> = ca.into_iter().zip(cb).collect();
        let ok = remap_children(x.kind.clone(), &map) == y.kind;
        if ok {
            memo.insert(a, b);
        }
        ok
    }

    /// The variable node ids, keyed by name (all label views).
    pub fn variable_nodes(&self, name: &str) -> Vec<NodeId> {
        self.nodes()
            .filter(|(_, n)| matches!(&n.kind, NodeKind::Variable { name: v } if v == name))
            .map(|(id, _)| id)
            .collect()
    }
}

pub(crate) fn remap_children(kind: NodeKind, map: &HashMap<NodeId, NodeId>) -> NodeKind {
    let m = |id: NodeId| *map.get(&id).unwrap_or(&id);
    match kind {
        NodeKind::Add { left, right } => NodeKind::Add {
            left: m(left),
            right: m(right),
        },
        NodeKind::Einsum {
            s1,
            s2,
            s3,
            left,
            right,
        } => NodeKind::Einsum {
            s1,
            s2,
            s3,
            left: m(left),
            right: m(right),
        },
        NodeKind::ElemUnary { op, child } => NodeKind::ElemUnary { op, child: m(child) },
        NodeKind::GenUnary { op, child } => NodeKind::GenUnary { op, child: m(child) },
        other => other,
    }
}
