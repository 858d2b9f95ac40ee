//! Higher derivatives by repeated differentiation of derivative DAGs.

use super::{derivative_name, differentiate, DerivativeResult, Mode};
use crate::error::{Error, Result};

/// Reverse mode for the first level, cross-country for every later one.
pub fn default_modes(k: usize) -> Vec<Mode> {
    (0..k)
        .map(|l| if l == 0 { Mode::Reverse } else { Mode::Cross })
        .collect()
}

/// The `k`-th derivative; `modes[l]` differentiates level `l + 1`, and an
/// empty list selects [`default_modes`].
pub fn higher_order(
    dag: &crate::expr::ExprDag,
    output: &str,
    wrt: &str,
    k: usize,
    modes: &[Mode],
) -> Result<DerivativeResult> {
    if k == 0 {
        return Err(Error::InvalidNode("derivative order must be at least 1".into()));
    }
    let modes = if modes.is_empty() {
        default_modes(k)
    } else if modes.len() == k {
        modes.to_vec()
    } else {
        return Err(Error::InvalidNode(format!(
            "{} modes given for order {k}",
            modes.len()
        )));
    };
    let mut cur = differentiate(dag, output, wrt, modes[0])?;
    for (level, &mode) in modes.iter().enumerate().skip(1) {
        let inner = derivative_name(output, wrt, level);
        let mut next = differentiate(&cur.dag, &inner, wrt, mode)?;
        let name = derivative_name(output, wrt, level + 1);
        next.dag.clear_outputs();
        next.dag.set_output(name, next.root);
        next.output = output.to_string();
        next.order = level + 1;
        cur = next;
    }
    Ok(cur)
}
