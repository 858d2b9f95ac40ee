//! Einsum contraction kernels.
//!
//! [`contract_reference`] is the literal nested-sum definition: it walks every
//! assignment of the labels in `s1 ∪ s2` (in that order) lexicographically and
//! accumulates `A[s1] * B[s2]` into `C[s3]`. [`contract_blocked`] regroups the
//! labels into batch / free / contracted blocks and runs a batched matrix
//! product over contiguous buffers.

use std::collections::HashMap;

use crate::tensor::{strides_of, DenseTensor};

/// Extents of every label in `s1 ∪ s2`, in union order.
fn union_dims(
    a: &DenseTensor,
    s1: &[String],
    b: &DenseTensor,
    s2: &[String],
) -> (Vec<String>, Vec<usize>) {
    let mut labels: Vec<String> = s1.to_vec();
    let mut dims: Vec<usize> = a.dims().to_vec();
    for (l, &d) in s2.iter().zip(b.dims()) {
        if !labels.contains(l) {
            labels.push(l.clone());
            dims.push(d);
        }
    }
    (labels, dims)
}

/// Stride of each union label inside a tensor labelled `own` (0 if absent).
fn strides_in(union: &[String], own: &[String], dims: &[usize]) -> Vec<usize> {
    let st = strides_of(dims);
    union
        .iter()
        .map(|l| own.iter().position(|o| o == l).map_or(0, |p| st[p]))
        .collect()
}

pub fn contract_reference(
    a: &DenseTensor,
    s1: &[String],
    b: &DenseTensor,
    s2: &[String],
    s3: &[String],
) -> DenseTensor {
    let (union, dims) = union_dims(a, s1, b, s2);
    let out_dims: Vec<usize> = s3
        .iter()
        .map(|l| dims[union.iter().position(|u| u == l).expect("s3 within union")])
        .collect();
    let mut out = DenseTensor::zeros(&out_dims);
    let total: usize = dims.iter().product();
    if total == 0 {
        return out;
    }
    let sa = strides_in(&union, s1, a.dims());
    let sb = strides_in(&union, s2, b.dims());
    let sc = strides_in(&union, s3, &out_dims);
    let (ad, bd) = (a.data(), b.data());
    let cd = out.data_mut();
    let n = union.len();
    let mut idx = vec![0usize; n];
    let (mut oa, mut ob, mut oc) = (0usize, 0usize, 0usize);
    if n == 0 {
        cd[0] = ad[0] * bd[0];
        return out;
    }
    let last = n - 1;
    let inner = dims[last];
    loop {
        // innermost axis as a tight loop
        let (xa, xb, xc) = (sa[last], sb[last], sc[last]);
        for t in 0..inner {
            cd[oc + t * xc] += ad[oa + t * xa] * bd[ob + t * xb];
        }
        // advance the remaining axes
        let mut ax = last;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            oc += sc[ax];
            if idx[ax] < dims[ax] {
                break;
            }
            oa -= sa[ax] * dims[ax];
            ob -= sb[ax] * dims[ax];
            oc -= sc[ax] * dims[ax];
            idx[ax] = 0;
        }
    }
}

/// Sum `t` (labelled `own`) over the labels not in `keep`, returning the
/// result laid out in the order of `order` (every label of `order` must be kept).
fn reduce_and_permute(t: &DenseTensor, own: &[String], order: &[String]) -> DenseTensor {
    let one = DenseTensor::scalar(1.0);
    contract_reference(t, own, &one, &[], order)
}

pub fn contract_blocked(
    a: &DenseTensor,
    s1: &[String],
    b: &DenseTensor,
    s2: &[String],
    s3: &[String],
) -> DenseTensor {
    let in_ = |v: &[String], l: &String| v.contains(l);
    let dim: HashMap<&String, usize> = s1
        .iter()
        .zip(a.dims())
        .chain(s2.iter().zip(b.dims()))
        .map(|(l, &d)| (l, d))
        .collect();
    let batch: Vec<String> = s3
        .iter()
        .filter(|l| in_(s1, l) && in_(s2, l))
        .cloned()
        .collect();
    let lfree: Vec<String> = s3
        .iter()
        .filter(|l| in_(s1, l) && !in_(s2, l))
        .cloned()
        .collect();
    let rfree: Vec<String> = s3
        .iter()
        .filter(|l| in_(s2, l) && !in_(s1, l))
        .cloned()
        .collect();
    let contr: Vec<String> = s1
        .iter()
        .filter(|l| in_(s2, l) && !in_(s3, l))
        .cloned()
        .collect();
    let size = |v: &[String]| v.iter().map(|l| dim[l]).product::<usize>();
    let (nb, nl, nr, nk) = (size(&batch), size(&lfree), size(&rfree), size(&contr));

    let a_order = [batch.clone(), lfree.clone(), contr.clone()].concat();
    let b_order = [batch.clone(), contr.clone(), rfree.clone()].concat();
    let ap = reduce_and_permute(a, s1, &a_order);
    let bp = reduce_and_permute(b, s2, &b_order);
    let (ad, bd) = (ap.data(), bp.data());

    let mut c = vec![0.0; nb * nl * nr];
    for p in 0..nb {
        let abase = p * nl * nk;
        let bbase = p * nk * nr;
        let cbase = p * nl * nr;
        for i in 0..nl {
            let crow = &mut c[cbase + i * nr..cbase + (i + 1) * nr];
            for k in 0..nk {
                let av = ad[abase + i * nk + k];
                let brow = &bd[bbase + k * nr..bbase + (k + 1) * nr];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
    let c_order = [batch, lfree, rfree].concat();
    let c_dims: Vec<usize> = c_order.iter().map(|l| dim[l]).collect();
    let ct = DenseTensor::new(c_dims, c).expect("block sizes agree");
    if c_order.as_slice() == s3 {
        ct
    } else {
        reduce_and_permute(&ct, &c_order, s3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(s: &str) -> Vec<String> {
        s.chars().map(|c| c.to_string()).collect()
    }

    // independent oracle: explicit loops for the matrix-vector case
    #[test]
    fn matvec_against_loops() {
        let a = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = DenseTensor::new(vec![2], vec![5.0, 6.0]).unwrap();
        let c = contract_reference(&a, &l("ij"), &x, &l("j"), &l("i"));
        assert_eq!(c.data(), &[17.0, 39.0]);
        let c = contract_blocked(&a, &l("ij"), &x, &l("j"), &l("i"));
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn hadamard() {
        let y = DenseTensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let x = DenseTensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        assert_eq!(
            contract_reference(&y, &l("i"), &x, &l("i"), &l("i")).data(),
            &[3.0, 8.0]
        );
    }

    #[test]
    fn scalar_times_scalar() {
        let a = DenseTensor::scalar(2.0);
        let b = DenseTensor::scalar(3.0);
        assert_eq!(contract_reference(&a, &[], &b, &[], &[]).data(), &[6.0]);
    }

    #[test]
    fn one_sided_sum_and_broadcast_free_label() {
        // C[i] = sum_k A[i,k] * b  (k only in A)
        let a = DenseTensor::new(vec![2, 3], (1..=6).map(f64::from).collect()).unwrap();
        let b = DenseTensor::scalar(2.0);
        let c = contract_reference(&a, &l("ik"), &b, &[], &l("i"));
        assert_eq!(c.data(), &[12.0, 30.0]);
        let c2 = contract_blocked(&a, &l("ik"), &b, &[], &l("i"));
        assert_eq!(c2.data(), c.data());
    }
}
