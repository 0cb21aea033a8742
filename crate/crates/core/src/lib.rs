// Negated float comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificates;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod kernels;
pub mod linprog;
pub mod measurement;
pub mod par;
pub mod recovery;
pub mod seed;
pub mod signals;
