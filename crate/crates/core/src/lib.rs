// Negated float comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contact;
pub mod geometry;
pub mod materials;
pub mod math;
pub mod multienv;
pub mod pipeline;
pub mod solver;
pub mod synth;
