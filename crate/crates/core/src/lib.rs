#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod exec;
pub mod gp;
pub mod input_model;
pub mod kernels;
pub mod procedure;
pub mod riskset;
pub mod simulators;
pub mod stats;
