//! Symbolic tensor calculus in Einstein notation.
//!
//! Tensor expressions are hash-consed DAGs whose only multiplication is the
//! generic product `A *_(s1,s2,s3) B`. Derivatives of any order are built
//! symbolically in forward, reverse, or cross-country mode, optionally
//! compressed by factoring out a trailing unit tensor, and checked against
//! central finite differences.

pub mod autodiff;
pub mod bench;
pub mod dot;
pub mod error;
pub mod eval;
pub mod expr;
pub mod index;
pub mod json;
pub mod kernel;
pub mod parser;
pub mod registry;
pub mod simplify;
pub mod solve;
pub mod tensor;

pub use error::{Error, Result};
pub use eval::{evaluate, Environment, FlopReport};
pub use expr::{ExprDag, Node, NodeId, NodeKind};
pub use index::{Index, IndexSet};
pub use tensor::DenseTensor;
