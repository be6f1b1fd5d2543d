// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cloud;
pub mod corridor;
pub mod leader;
pub mod metrics;
pub mod mpc;
pub mod platoon;
pub mod qp;
pub mod scenario;
pub mod traffic;
pub mod units;
