// NaN must fail range checks, so `!(x <= y)` is used on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod control;
pub mod geometry;
pub mod monitor;
pub mod perception;
pub mod scenario;
pub mod sim;
pub mod task;
