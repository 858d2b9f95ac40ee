//! Dense row-major tensors and their on-disk formats.
//!
//! Binary layout (`TCT1`): the 4-byte magic, a little-endian `u32` rank,
//! `rank` little-endian `u64` extents, then the entries as little-endian `f64`
//! in row-major order. Small tensors can also be written as JSON
//! `{"dims":[...],"data":[...]}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TCT1_MAGIC: &[u8; 4] = b"TCT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::DimMismatch(format!(
                "dims {:?} need {} entries, got {}",
                dims,
                n,
                data.len()
            )));
        }
        Ok(DenseTensor { dims, data })
    }

    pub fn scalar(v: f64) -> Self {
        DenseTensor {
            dims: vec![],
            data: vec![v],
        }
    }

    pub fn filled(dims: &[usize], v: f64) -> Self {
        DenseTensor {
            dims: dims.to_vec(),
            data: vec![v; dims.iter().product()],
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..dims.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < dims[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        DenseTensor {
            dims: dims.to_vec(),
            data,
        }
    }

    /// Unit tensor over `left ++ right` (equal extents): 1 where paired
    /// positions agree, else 0.
    pub fn delta(half: &[usize]) -> Self {
        let mut dims = half.to_vec();
        dims.extend_from_slice(half);
        let r = half.len();
        Self::from_fn(&dims, |ix| {
            if (0..r).all(|a| ix[a] == ix[a + r]) {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.dims)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        let off: usize = idx.iter().zip(self.strides()).map(|(i, s)| i * s).sum();
        self.data[off]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        DenseTensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(DenseTensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Reinterpret with new extents of equal total size.
    pub fn reshaped(&self, dims: &[usize]) -> Result<Self> {
        DenseTensor::new(dims.to_vec(), self.data.clone())
    }

    /// Permute axes: axis `a` of the result is axis `perm[a]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let src_strides = self.strides();
        let dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        DenseTensor::from_fn(&dims, |ix| {
            let off: usize = ix
                .iter()
                .zip(perm)
                .map(|(&i, &p)| i * src_strides[p])
                .sum();
            self.data[off]
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.dims.len() + 8 * self.data.len());
        out.extend_from_slice(TCT1_MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| Error::Format(m.to_string());
        if bytes.len() < 8 || &bytes[..4] != TCT1_MAGIC {
            return Err(err("missing TCT1 magic"));
        }
        let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let mut pos = 8;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let chunk = bytes.get(pos..pos + 8).ok_or_else(|| err("truncated dims"))?;
            dims.push(u64::from_le_bytes(chunk.try_into().unwrap()) as usize);
            pos += 8;
        }
        let n: usize = dims.iter().product();
        if bytes.len() != pos + 8 * n {
            return Err(err("payload length does not match dims"));
        }
        let data = bytes[pos..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        DenseTensor::new(dims, data)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tensor serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: DenseTensor =
            serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
        DenseTensor::new(t.dims, t.data)
    }
}

pub fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for a in (0..dims.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * dims[a + 1];
    }
    s
}

/// Largest entrywise difference relative to the larger of the two magnitudes
/// (floored at 1 so values near zero are compared absolutely).
pub fn max_rel_diff(a: &DenseTensor, b: &DenseTensor) -> f64 {
    assert_eq!(a.dims(), b.dims(), "shape mismatch in comparison");
    let scale = a.max_abs().max(b.max_abs()).max(1.0);
    a.data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}
