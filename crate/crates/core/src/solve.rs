//! Dense linear solves for Newton steps.

use crate::autodiff::CompressionRecord;
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// LU factors with partial pivoting of a square row-major matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    a: Vec<f64>,
    piv: Vec<usize>,
}

impl Lu {
    pub fn factor(mut a: Vec<f64>, n: usize) -> Result<Lu> {
        if a.len() != n * n {
            return Err(Error::DimMismatch(format!("{} entries for a {n}x{n} matrix", a.len())));
        }
        let mut piv: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let (p, best) = (col..n)
                .map(|r| (r, a[r * n + col].abs()))
                .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular);
            }
            if p != col {
                for j in 0..n {
                    a.swap(p * n + j, col * n + j);
                }
                piv.swap(p, col);
            }
            let d = a[col * n + col];
            for r in col + 1..n {
                let f = a[r * n + col] / d;
                a[r * n + col] = f;
                if f != 0.0 {
                    let (top, bottom) = a.split_at_mut(r * n);
                    let src = &top[col * n + col + 1..col * n + n];
                    for (dst, s) in bottom[col + 1..n].iter_mut().zip(src) {
                        *dst -= f * s;
                    }
                }
            }
        }
        Ok(Lu { n, a, piv })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let s: f64 = (0..r).map(|c| self.a[r * n + c] * x[c]).sum();
            x[r] -= s;
        }
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| self.a[r * n + c] * x[c]).sum();
            x[r] = (x[r] - s) / self.a[r * n + r];
        }
        x
    }
}

/// Solve `A x = b` by Gaussian elimination.
pub fn solve_dense(a: &[f64], n: usize, b: &[f64]) -> Result<Vec<f64>> {
    Ok(Lu::factor(a.to_vec(), n)?.solve(b))
}

/// Solve `H x = g` for `H = core *_(sig) Delta` over axes `[i, a, i', b]`
/// with one unit-tensor pair `(i, i')`: one `k x k` block per `i`, shared
/// when the core does not depend on `i`.
pub fn solve_compressed(core: &DenseTensor, rec: &CompressionRecord, g: &DenseTensor) -> Result<DenseTensor> {
    let (s_core, _, out) = &rec.sig;
    let bad = || Error::NotCompressible("expected a single paired axis over a matrix variable".into());
    if rec.delta_pairs.len() != 1 || out.len() != 4 || g.rank() != 2 {
        return Err(bad());
    }
    let (p, q) = &rec.delta_pairs[0];
    let (ip, iq) = (
        out.iter().position(|l| l == p).ok_or_else(bad)?,
        out.iter().position(|l| l == q).ok_or_else(bad)?,
    );
    let (row_pair, col_pair) = if ip < 2 { (ip, iq) } else { (iq, ip) };
    if row_pair >= 2 || col_pair < 2 {
        return Err(bad());
    }
    let a_pos = 1 - row_pair;
    let b_pos = 2 + (1 - (col_pair - 2));
    let (la, lb) = (&out[a_pos], &out[b_pos]);
    let pair_in_core = |l: &String| l == p || l == q;
    let ci = s_core.iter().position(pair_in_core);
    let ca = s_core.iter().position(|l| l == la).ok_or_else(bad)?;
    let cb = s_core.iter().position(|l| l == lb).ok_or_else(bad)?;
    let (n, k) = (g.dims()[row_pair], g.dims()[a_pos]);
    let strides = core.strides();
    let block = |i: usize| -> Vec<f64> {
        let mut m = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..k {
                let mut off = a * strides[ca] + b * strides[cb];
                if let Some(c) = ci {
                    off += i * strides[c];
                }
                m[a * k + b] = core.data()[off];
            }
        }
        m
    };
    let g_at = |i: usize, a: usize| {
        if row_pair == 0 {
            g.get(&[i, a])
        } else {
            g.get(&[a, i])
        }
    };
    let shared = match ci {
        None => Some(Lu::factor(block(0), k)?),
        Some(_) => None,
    };
    let mut x = DenseTensor::zeros(g.dims());
    for i in 0..n {
        let rhs: Vec<f64> = (0..k).map(|a| g_at(i, a)).collect();
        let sol = match &shared {
            Some(lu) => lu.solve(&rhs),
            None => Lu::factor(block(i), k)?.solve(&rhs),
        };
        for (a, v) in sol.into_iter().enumerate() {
            let idx = if row_pair == 0 { i * k + a } else { a * n + i };
            x.data_mut()[idx] = v;
        }
    }
    Ok(x)
}
