// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod ddp;
pub mod demo;
pub mod dynamics;
pub mod ocp;
pub mod planner;
pub mod tracking;
