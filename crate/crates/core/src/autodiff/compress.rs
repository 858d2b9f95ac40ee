//! Splitting a derivative into a core and a trailing unit tensor.

use super::{derivative_name, CompressionRecord, DerivativeResult};
use crate::error::{Error, Result};
use crate::expr::{ExprDag, NodeId, NodeKind};
use crate::index::IndexSet;
use crate::simplify::{delta_contract, simplify, DeltaOutcome};

/// Store only the core of `core *_(s_core, s_delta, s_full) Delta`.
pub fn compress(r: &DerivativeResult) -> Result<DerivativeResult> {
    if r.compression.is_some() {
        return Ok(r.clone());
    }
    let not = || Error::NotCompressible(format!("{} has no trailing unit tensor", r.root));
    let NodeKind::Einsum {
        s1,
        s2,
        s3,
        left,
        right,
    } = r.dag.kind(r.root).clone()
    else {
        return Err(not());
    };
    let mut scratch = r.dag.clone();
    match delta_contract(&mut scratch, r.root) {
        DeltaOutcome::Compressible => {}
        DeltaOutcome::Eliminated(_) => {
            let name = derivative_name(&r.output, &r.wrt, r.order);
            let mut d = r.dag.clone();
            d.clear_outputs();
            d.set_output(name.clone(), r.root);
            let d = simplify(&d);
            let root = d.output(&name)?;
            return Ok(DerivativeResult {
                dag: d,
                root,
                ..r.clone()
            });
        }
        DeltaOutcome::Unchanged => return Err(not()),
    }
    let (core, s_core, delta, s_delta) = if r.dag.kind(right).is_delta() {
        (left, s1, right, s2)
    } else {
        (right, s2, left, s1)
    };
    let rank = s_delta.len() / 2;
    let dims = r.dag.shape(delta).dims()[..rank].to_vec();
    let pairs = (0..rank)
        .map(|k| (s_delta[k].clone(), s_delta[k + rank].clone()))
        .collect();
    let name = derivative_name(&r.output, &r.wrt, r.order);
    let mut d = r.dag.clone();
    d.clear_outputs();
    d.set_output(name.clone(), core);
    let d = d.compacted();
    let root = d.output(&name)?;
    Ok(DerivativeResult {
        dag: d,
        root,
        compression: Some(CompressionRecord {
            core_id: root.0,
            sig: (s_core, s_delta, s3),
            delta_pairs: pairs,
            delta_dims: dims,
        }),
        ..r.clone()
    })
}

/// Rebuild the full derivative inside `g` from a core node.
pub fn expand_in(g: &mut ExprDag, core: NodeId, rec: &CompressionRecord) -> Result<NodeId> {
    let left: Vec<String> = rec.delta_pairs.iter().map(|p| p.0.clone()).collect();
    let right: Vec<String> = rec.delta_pairs.iter().map(|p| p.1.clone()).collect();
    if left.is_empty() {
        return Ok(core);
    }
    let delta = g.delta(
        IndexSet::from_parts(&left, &rec.delta_dims)?,
        IndexSet::from_parts(&right, &rec.delta_dims)?,
    )?;
    g.einsum(core, &rec.sig.0, delta, &rec.sig.1, &rec.sig.2)
}

/// Full-shape derivative from a compressed one; identity without a record.
pub fn expand(r: &DerivativeResult) -> Result<DerivativeResult> {
    let Some(rec) = &r.compression else {
        return Ok(r.clone());
    };
    let mut g = r.dag.clone();
    let root = expand_in(&mut g, r.root, rec)?;
    let name = derivative_name(&r.output, &r.wrt, r.order);
    g.clear_outputs();
    g.set_output(name.clone(), root);
    let g = g.compacted();
    let root = g.output(&name)?;
    Ok(DerivativeResult {
        dag: g,
        root,
        compression: None,
        ..r.clone()
    })
}
