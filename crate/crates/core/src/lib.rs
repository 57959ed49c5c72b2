// Range checks are written negated so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod boxmodel;
pub mod dataset;
pub mod ensemble;
pub mod eval;
pub mod rollout;
pub mod sdtw;
pub mod tft;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
