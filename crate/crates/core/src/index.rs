//! Symbolic index labels and ordered index sets.
//!
//! An [`IndexSet`] is an ordered sequence of distinct labels, each carrying a
//! concrete extent. Set operations act on labels; concatenation keeps order.

use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Index {
    pub label: String,
    pub dim: usize,
}

impl Index {
    pub fn new(label: impl Into<String>, dim: usize) -> Result<Self> {
        let label = label.into();
        if dim == 0 {
            return Err(Error::DimMismatch(format!("index `{label}` has extent 0")));
        }
        if !is_valid_label(&label) {
            return Err(Error::InvalidNode(format!("bad index label `{label}`")));
        }
        Ok(Index { label, dim })
    }
}

impl fmt::Display for Index {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.label, self.dim)
    }
}

/// A label is one ASCII letter followed by optional ASCII digits (`i`, `k12`).
pub fn is_valid_label(label: &str) -> bool {
    let mut chars = label.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => chars.all(|c| c.is_ascii_digit()),
        _ => false,
    }
}

/// Split a compact label string such as `ij1k` into `["i", "j1", "k"]`.
pub fn split_labels(s: &str) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for c in s.chars() {
        if c.is_ascii_alphabetic() {
            out.push(c.to_string());
        } else if c.is_ascii_digit() {
            match out.last_mut() {
                Some(last) => last.push(c),
                None => return Err(Error::InvalidNode(format!("bad label string `{s}`"))),
            }
        } else if !c.is_whitespace() {
            return Err(Error::InvalidNode(format!("bad label string `{s}`")));
        }
    }
    Ok(out)
}

pub fn join_labels<S: AsRef<str>>(labels: &[S]) -> String {
    labels.iter().map(|l| l.as_ref()).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexSet {
    indices: Vec<Index>,
}

impl IndexSet {
    pub fn empty() -> Self {
        IndexSet::default()
    }

    pub fn new(indices: Vec<Index>) -> Result<Self> {
        let mut seen = HashSet::new();
        for ix in &indices {
            if !seen.insert(ix.label.as_str()) {
                return Err(Error::DuplicateIndex(ix.label.clone()));
            }
        }
        Ok(IndexSet { indices })
    }

    /// Build from parallel label and extent lists.
    pub fn from_parts<S: AsRef<str>>(labels: &[S], dims: &[usize]) -> Result<Self> {
        if labels.len() != dims.len() {
            return Err(Error::DimMismatch(format!(
                "{} labels but {} extents",
                labels.len(),
                dims.len()
            )));
        }
        let indices = labels
            .iter()
            .zip(dims)
            .map(|(l, &d)| Index::new(l.as_ref(), d))
            .collect::<Result<Vec<_>>>()?;
        IndexSet::new(indices)
    }

    /// Parse the compact form used by declarations: `("ij", [4, 3])`.
    pub fn parse(labels: &str, dims: &[usize]) -> Result<Self> {
        IndexSet::from_parts(&split_labels(labels)?, dims)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Index> {
        self.indices.iter()
    }

    pub fn indices(&self) -> &[Index] {
        &self.indices
    }

    pub fn labels(&self) -> Vec<String> {
        self.indices.iter().map(|i| i.label.clone()).collect()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.indices.iter().map(|i| i.dim).collect()
    }

    /// Number of scalar entries of a tensor over this index set.
    pub fn size(&self) -> usize {
        self.indices.iter().map(|i| i.dim).product()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.indices.iter().any(|i| i.label == label)
    }

    pub fn dim_of(&self, label: &str) -> Option<usize> {
        self.indices.iter().find(|i| i.label == label).map(|i| i.dim)
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.indices.iter().position(|i| i.label == label)
    }

    /// Ordered concatenation `s1 s2`; labels must be disjoint.
    pub fn concat(&self, other: &IndexSet) -> Result<IndexSet> {
        let mut v = self.indices.clone();
        v.extend(other.indices.iter().cloned());
        IndexSet::new(v)
    }

    /// Label-wise union keeping the order of `self` followed by new labels of `other`.
    pub fn union(&self, other: &IndexSet) -> Result<IndexSet> {
        let mut v = self.indices.clone();
        for ix in &other.indices {
            match self.dim_of(&ix.label) {
                Some(d) if d != ix.dim => {
                    return Err(Error::DimMismatch(format!(
                        "index `{}` has extents {} and {}",
                        ix.label, d, ix.dim
                    )))
                }
                Some(_) => {}
                None => v.push(ix.clone()),
            }
        }
        Ok(IndexSet { indices: v })
    }

    pub fn is_subset_of(&self, other: &IndexSet) -> bool {
        self.indices.iter().all(|i| other.contains(&i.label))
    }

    pub fn same_labels(&self, other: &IndexSet) -> bool {
        self.len() == other.len() && self.is_subset_of(other)
    }

    /// Apply a label mapping; labels not in the map are kept.
    pub fn renamed(&self, map: &std::collections::HashMap<String, String>) -> Result<IndexSet> {
        let v = self
            .indices
            .iter()
            .map(|i| Index {
                label: map.get(&i.label).cloned().unwrap_or_else(|| i.label.clone()),
                dim: i.dim,
            })
            .collect();
        IndexSet::new(v)
    }

    /// Same extents with the given labels.
    pub fn relabeled<S: AsRef<str>>(&self, labels: &[S]) -> Result<IndexSet> {
        IndexSet::from_parts(labels, &self.dims())
    }

    /// Compact label string, e.g. `ij`.
    pub fn label_string(&self) -> String {
        join_labels(&self.labels())
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (n, ix) in self.indices.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{ix}")?;
        }
        write!(f, "]")
    }
}

impl<'a> IntoIterator for &'a IndexSet {
    type Item = &'a Index;
    type IntoIter = std::slice::Iter<'a, Index>;
    fn into_iter(self) -> Self::IntoIter {
        self.indices.iter()
    }
}

/// Generates labels that avoid a given set.
#[derive(Debug, Clone, Default)]
pub struct LabelPool {
    taken: HashSet<String>,
    counter: usize,
}

impl LabelPool {
    pub fn avoiding<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        LabelPool {
            taken: labels.into_iter().map(Into::into).collect(),
            counter: 0,
        }
    }

    pub fn reserve(&mut self, label: &str) {
        self.taken.insert(label.to_string());
    }

    pub fn fresh(&mut self) -> String {
        const LETTERS: &[u8] = b"pqrstuvwxyzabcdefghmno";
        loop {
            let letter = LETTERS[self.counter % LETTERS.len()] as char;
            let round = self.counter / LETTERS.len();
            self.counter += 1;
            let label = if round == 0 {
                letter.to_string()
            } else {
                format!("{letter}{round}")
            };
            if self.taken.insert(label.clone()) {
                return label;
            }
        }
    }

    pub fn fresh_n(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.fresh()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_labels() {
        assert_eq!(
            IndexSet::parse("ii", &[2, 2]),
            Err(Error::DuplicateIndex("i".into()))
        );
    }

    #[test]
    fn split_multi_char_labels() {
        assert_eq!(split_labels("ij1k").unwrap(), vec!["i", "j1", "k"]);
        assert!(split_labels("1i").is_err());
    }

    #[test]
    fn concat_requires_disjoint() {
        let a = IndexSet::parse("ij", &[2, 3]).unwrap();
        let b = IndexSet::parse("k", &[4]).unwrap();
        assert_eq!(a.concat(&b).unwrap().label_string(), "ijk");
        assert!(a.concat(&a).is_err());
    }

    #[test]
    fn union_checks_extents() {
        let a = IndexSet::parse("ij", &[2, 3]).unwrap();
        let b = IndexSet::parse("jk", &[3, 4]).unwrap();
        assert_eq!(a.union(&b).unwrap().dims(), vec![2, 3, 4]);
        let c = IndexSet::parse("j", &[5]).unwrap();
        assert!(matches!(a.union(&c), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn pool_skips_taken() {
        let mut pool = LabelPool::avoiding(["p", "q"]);
        let a = pool.fresh();
        let b = pool.fresh();
        assert_ne!(a, b);
        assert!(a != "p" && a != "q" && b != "p" && b != "q");
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(Index::new("i", 0).is_err());
    }
}
