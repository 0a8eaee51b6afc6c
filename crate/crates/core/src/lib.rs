#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod effects;
pub mod eval;
pub mod nn;
pub mod stream;
pub mod tensor;
pub mod train;
