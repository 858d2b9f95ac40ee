//! Cross-country mode by vertex elimination on the linearized DAG.
//!
//! Every edge `u -> v` on an `x -> y` path carries the local partial
//! `∂v/∂u` as a sum of compact terms. A term stores a core tensor together
//! with two ports listing, per axis of `v` and of `u`, an abstract label:
//!
//! ```text
//! J[vport, uport] = scale * Σ_{labels outside the ports} core[klabels]
//! ```
//!
//! A label in both ports is a diagonal (a unit-tensor factor); a port label
//! missing from the core is a broadcast. Eliminating a vertex composes every
//! in-edge term with every out-edge term by unifying the labels of the
//! shared port, so diagonal structure is carried symbolically and only cores
//! are ever multiplied. The vertex to eliminate next is the one whose
//! products create the lowest-order cores, then the fewest operations, then
//! the earliest in the DAG; on a chain this multiplies vectors first, then
//! matrices, and so on.
//!
//! Finally the `x -> y` edge is expanded into a node. Unit tensors surface
//! only there, as the last factor, where simplification either removes them
//! or leaves a compressible trailing product.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{finish, is_variable, variable_dims, zero_of, DerivativeResult};
use crate::error::Result;
use crate::eval::{flop_report, FlopReport};
use crate::expr::{ExprDag, NodeId, NodeKind};
use crate::index::IndexSet;
use crate::registry::{self, UnaryKind};

type Lab = u32;

const SOURCE: usize = usize::MAX;

#[derive(Debug, Clone)]
struct Term {
    core: Option<NodeId>,
    k: Vec<Lab>,
    v: Vec<Lab>,
    u: Vec<Lab>,
    scale: f64,
}

#[derive(Debug)]
pub struct CrossReport {
    pub result: DerivativeResult,
    /// Cost of evaluating the derivative DAG.
    pub flops: FlopReport,
    /// Vertices in the order they were eliminated.
    pub eliminated: Vec<NodeId>,
}

struct Linearized {
    dims: Vec<usize>,
    edges: BTreeMap<(usize, usize), Vec<Term>>,
    preds: BTreeMap<usize, BTreeSet<usize>>,
    succs: BTreeMap<usize, BTreeSet<usize>>,
}

fn name(l: Lab) -> String {
    format!("l{l}")
}

fn names(ls: &[Lab]) -> Vec<String> {
    ls.iter().map(|&l| name(l)).collect()
}

fn dedup(ls: impl IntoIterator<Item = Lab>) -> Vec<Lab> {
    let mut out = Vec::new();
    for l in ls {
        if !out.contains(&l) {
            out.push(l);
        }
    }
    out
}

/// The shape of a composition, before any node is built.
struct Plan {
    term: Term,
    /// Both cores present: `(c1, k1, c2, k2)` multiply into `term.k`.
    product: Option<(NodeId, Vec<Lab>, NodeId, Vec<Lab>)>,
    flops: u64,
}

impl Linearized {
    fn fresh(&mut self, dim: usize) -> Lab {
        self.dims.push(dim);
        (self.dims.len() - 1) as Lab
    }

    fn fresh_n(&mut self, dims: &[usize]) -> Vec<Lab> {
        dims.iter().map(|&d| self.fresh(d)).collect()
    }

    fn add_edge(&mut self, g: &mut ExprDag, from: usize, to: usize, t: Term) -> Result<()> {
        self.preds.entry(to).or_default().insert(from);
        self.succs.entry(from).or_default().insert(to);
        let list = self.edges.entry((from, to)).or_default();
        let pat = pattern(&t);
        if let Some(pos) = list.iter().position(|o| pattern(o) == pat) {
            let old = list.remove(pos);
            let merged = merge(g, old, t)?;
            self.edges.get_mut(&(from, to)).expect("edge exists").push(merged);
        } else {
            list.push(t);
        }
        Ok(())
    }

    /// Compose `t1: s <- u` after `t2: u <- p`.
    fn plan(&self, t1: &Term, t2: &Term) -> Plan {
        let sub: HashMap<Lab, Lab> = t2.v.iter().copied().zip(t1.u.iter().copied()).collect();
        let m = |l: &Lab| *sub.get(l).unwrap_or(l);
        let k2: Vec<Lab> = t2.k.iter().map(m).collect();
        let w: Vec<Lab> = t2.u.iter().map(m).collect();
        let ports: Vec<Lab> = dedup(t1.v.iter().chain(&w).copied());
        let mut scale = t1.scale * t2.scale;
        for l in &t1.u {
            if !ports.contains(l) && !t1.k.contains(l) && !k2.contains(l) {
                scale *= self.dims[*l as usize] as f64;
            }
        }
        let (core, k, product, flops) = match (t1.core, t2.core) {
            (None, None) => (None, vec![], None, 0),
            (Some(c), None) => (Some(c), t1.k.clone(), None, 0),
            (None, Some(c)) => (Some(c), k2.clone(), None, 0),
            (Some(c1), Some(c2)) => {
                let all = dedup(t1.k.iter().chain(&k2).copied());
                let out: Vec<Lab> = ports.iter().copied().filter(|l| all.contains(l)).collect();
                let flops = all.iter().map(|&l| self.dims[l as usize] as u64).product();
                (
                    None,
                    out,
                    Some((c1, t1.k.clone(), c2, k2.clone())),
                    flops,
                )
            }
        };
        Plan {
            term: Term {
                core,
                k,
                v: t1.v.clone(),
                u: w,
                scale,
            },
            product,
            flops,
        }
    }

    fn realize(&self, g: &mut ExprDag, p: Plan) -> Result<Term> {
        let mut t = p.term;
        if let Some((c1, k1, c2, k2)) = p.product {
            t.core = Some(g.einsum(c1, &names(&k1), c2, &names(&k2), &names(&t.k))?);
        }
        Ok(t)
    }

    /// `(max rank of created cores, created operations)` for eliminating `u`.
    fn cost(&self, u: usize) -> (usize, u64) {
        let mut rank = 0;
        let mut flops = 0u64;
        for &p in self.preds.get(&u).into_iter().flatten() {
            for &s in self.succs.get(&u).into_iter().flatten() {
                for t1 in &self.edges[&(u, s)] {
                    for t2 in &self.edges[&(p, u)] {
                        let plan = self.plan(t1, t2);
                        if plan.product.is_some() {
                            rank = rank.max(plan.term.k.len());
                            flops = flops.saturating_add(plan.flops);
                        }
                    }
                }
            }
        }
        (rank, flops)
    }

    fn eliminate(&mut self, g: &mut ExprDag, u: usize) -> Result<()> {
        let preds: Vec<usize> = self.preds.remove(&u).unwrap_or_default().into_iter().collect();
        let succs: Vec<usize> = self.succs.remove(&u).unwrap_or_default().into_iter().collect();
        let mut incoming = Vec::new();
        for &p in &preds {
            incoming.push((p, self.edges.remove(&(p, u)).unwrap_or_default()));
            self.succs.get_mut(&p).map(|s| s.remove(&u));
        }
        let mut outgoing = Vec::new();
        for &s in &succs {
            outgoing.push((s, self.edges.remove(&(u, s)).unwrap_or_default()));
            self.preds.get_mut(&s).map(|x| x.remove(&u));
        }
        for (p, t2s) in &incoming {
            for (s, t1s) in &outgoing {
                for t1 in t1s {
                    for t2 in t2s {
                        let plan = self.plan(t1, t2);
                        let t = self.realize(g, plan)?;
                        self.add_edge(g, *p, *s, t)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Position pattern of a term: for each port axis, the first axis carrying
/// the same label and whether the core has that label.
fn pattern(t: &Term) -> Vec<(usize, bool)> {
    let ports: Vec<Lab> = t.v.iter().chain(&t.u).copied().collect();
    ports
        .iter()
        .map(|l| {
            (
                ports.iter().position(|x| x == l).expect("label is present"),
                t.k.contains(l),
            )
        })
        .collect()
}

/// Core summed to its port labels, in port order, with the scale folded in.
fn normalize(g: &mut ExprDag, t: &Term) -> Result<(NodeId, Vec<Lab>)> {
    let canon: Vec<Lab> = dedup(t.v.iter().chain(&t.u).copied())
        .into_iter()
        .filter(|l| t.k.contains(l))
        .collect();
    let Some(core) = t.core else {
        return Ok((g.scalar(t.scale), vec![]));
    };
    if t.scale == 1.0 && t.k == canon {
        return Ok((core, canon));
    }
    let c = names(&canon);
    let node = if t.scale == 1.0 {
        let one = g.scalar(1.0);
        g.einsum(core, &names(&t.k), one, &[], &c)?
    } else {
        let s = g.scalar(t.scale);
        g.einsum(s, &[], core, &names(&t.k), &c)?
    };
    Ok((node, canon))
}

/// Sum of two terms with equal patterns.
fn merge(g: &mut ExprDag, a: Term, b: Term) -> Result<Term> {
    if a.core.is_none() && b.core.is_none() {
        return Ok(Term {
            scale: a.scale + b.scale,
            ..a
        });
    }
    let (ca, ka) = normalize(g, &a)?;
    let (cb, _) = normalize(g, &b)?;
    let sum = g.add(ca, cb)?;
    Ok(Term {
        core: Some(sum),
        k: ka,
        v: a.v,
        u: a.u,
        scale: 1.0,
    })
}

/// Local partial terms for the edge `child -> v`.
fn local_terms(g: &mut ExprDag, lin: &mut Linearized, v: NodeId, child: NodeId) -> Result<Vec<Term>> {
    let mut out = Vec::new();
    match g.kind(v).clone() {
        NodeKind::Add { left, right } => {
            for c in [left, right] {
                if c == child {
                    let l = lin.fresh_n(&g.shape(v).dims());
                    out.push(Term {
                        core: None,
                        k: vec![],
                        v: l.clone(),
                        u: l,
                        scale: 1.0,
                    });
                }
            }
        }
        NodeKind::Einsum {
            s1,
            s2,
            s3,
            left,
            right,
        } => {
            for (c, sc, other, so) in [(left, &s1, right, &s2), (right, &s2, left, &s1)] {
                if c != child {
                    continue;
                }
                let mut map: HashMap<String, Lab> = HashMap::new();
                for (labels, node) in [(sc, c), (so, other)] {
                    let dims = g.shape(node).dims();
                    for (l, d) in labels.iter().zip(dims) {
                        if !map.contains_key(l) {
                            let f = lin.fresh(d);
                            map.insert(l.clone(), f);
                        }
                    }
                }
                let m = |ls: &[String]| ls.iter().map(|l| map[l]).collect::<Vec<_>>();
                let (core, k, scale) = match g.kind(other).scalar_value() {
                    Some(s) => (None, vec![], s),
                    None => (Some(other), m(so), 1.0),
                };
                out.push(Term {
                    core,
                    k,
                    v: m(&s3),
                    u: m(sc),
                    scale,
                });
            }
        }
        NodeKind::ElemUnary { op, child: c } if c == child => {
            let UnaryKind::Elementwise { derivative, .. } = registry::lookup(&op)?.kind else {
                unreachable!("element-wise node holds an element-wise op")
            };
            if let Some(fp) = derivative(g, c, v)? {
                let l = lin.fresh_n(&g.shape(c).dims());
                out.push(Term {
                    core: Some(fp),
                    k: l.clone(),
                    v: l.clone(),
                    u: l,
                    scale: 1.0,
                });
            }
        }
        NodeKind::GenUnary { op, child: c } if c == child => {
            let UnaryKind::General { derivative, .. } = registry::lookup(&op)?.kind else {
                unreachable!("general node holds a general op")
            };
            let fp = derivative(g, c, v)?;
            let r = lin.fresh_n(&g.shape(v).dims());
            let d = lin.fresh_n(&g.shape(c).dims());
            out.push(Term {
                core: Some(fp),
                k: [r.clone(), d.clone()].concat(),
                v: r,
                u: d,
                scale: 1.0,
            });
        }
        _ => {}
    }
    Ok(out)
}

/// Expand a term on the `x -> y` edge into a node over `s_y ++ s_x`.
fn materialize(g: &mut ExprDag, lin: &mut Linearized, t: &Term) -> Result<NodeId> {
    let (mut node, mut k) = normalize(g, t)?;
    let ports: Vec<Lab> = t.v.iter().chain(&t.u).copied().collect();
    let bcast: Vec<Lab> = dedup(ports.iter().copied())
        .into_iter()
        .filter(|l| !k.contains(l) && ports.iter().filter(|x| *x == l).count() == 1)
        .collect();
    if !bcast.is_empty() {
        let dims: Vec<usize> = bcast.iter().map(|&l| lin.dims[l as usize]).collect();
        let ones = g.filled(IndexSet::from_parts(&names(&bcast), &dims)?, 1.0);
        let widened = [k.clone(), bcast.clone()].concat();
        node = g.einsum(node, &names(&k), ones, &names(&bcast), &names(&widened))?;
        k = widened;
    }
    let mut out: Vec<Lab> = Vec::with_capacity(ports.len());
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &l in &ports {
        if out.contains(&l) {
            let p = lin.fresh(lin.dims[l as usize]);
            left.push(l);
            right.push(p);
            out.push(p);
        } else {
            out.push(l);
        }
    }
    if left.is_empty() {
        if k == out {
            return Ok(node);
        }
        let one = g.scalar(1.0);
        return g.einsum(node, &names(&k), one, &[], &names(&out));
    }
    let dims: Vec<usize> = left.iter().map(|&l| lin.dims[l as usize]).collect();
    let delta = g.delta(
        IndexSet::from_parts(&names(&left), &dims)?,
        IndexSet::from_parts(&names(&right), &dims)?,
    )?;
    let sd = [left, right].concat();
    g.einsum(node, &names(&k), delta, &names(&sd), &names(&out))
}

/// Derivative of `output` with respect to `wrt` by cross-country elimination.
pub fn cross_country_diff(dag: &ExprDag, output: &str, wrt: &str) -> Result<CrossReport> {
    let xdims = variable_dims(dag, wrt)?;
    let mut g = dag.compacted();
    let y = g.output(output)?;
    let order = g.reachable(&[y]);
    let mut dep: BTreeSet<NodeId> = BTreeSet::new();
    for &id in &order {
        if is_variable(&g, id, wrt) || g.kind(id).children().iter().any(|c| dep.contains(c)) {
            dep.insert(id);
        }
    }
    let mut lin = Linearized {
        dims: Vec::new(),
        edges: BTreeMap::new(),
        preds: BTreeMap::new(),
        succs: BTreeMap::new(),
    };
    let mut eliminated = Vec::new();
    let root = if !dep.contains(&y) {
        let dims = [g.shape(y).dims(), xdims.clone()].concat();
        zero_of(&mut g, &dims)?
    } else {
        for &id in &dep {
            if is_variable(&g, id, wrt) {
                let l = lin.fresh_n(&xdims);
                lin.add_edge(
                    &mut g,
                    SOURCE,
                    id.index(),
                    Term {
                        core: None,
                        k: vec![],
                        v: l.clone(),
                        u: l,
                        scale: 1.0,
                    },
                )?;
                continue;
            }
            let mut children = g.kind(id).children();
            children.dedup();
            for c in children {
                if dep.contains(&c) {
                    for t in local_terms(&mut g, &mut lin, id, c)? {
                        lin.add_edge(&mut g, c.index(), id.index(), t)?;
                    }
                }
            }
        }
        let mut remaining: BTreeSet<usize> =
            dep.iter().map(|id| id.index()).filter(|&i| i != y.index()).collect();
        while !remaining.is_empty() {
            let u = *remaining
                .iter()
                .min_by_key(|&&u| {
                    let (r, f) = lin.cost(u);
                    (r, f, u)
                })
                .expect("non-empty");
            remaining.remove(&u);
            lin.eliminate(&mut g, u)?;
            eliminated.push(NodeId(u as u32));
        }
        let terms = lin.edges.remove(&(SOURCE, y.index())).unwrap_or_default();
        let mut acc: Option<NodeId> = None;
        for t in &terms {
            let n = materialize(&mut g, &mut lin, t)?;
            acc = Some(match acc {
                None => n,
                Some(a) => g.add(a, n)?,
            });
        }
        match acc {
            Some(r) => r,
            None => {
                let dims = [g.shape(y).dims(), xdims.clone()].concat();
                zero_of(&mut g, &dims)?
            }
        }
    };
    let result = finish(g, root, output, wrt, 1);
    let flops = flop_report(&result.dag, &[result.root]);
    Ok(CrossReport {
        result,
        flops,
        eliminated,
    })
}
