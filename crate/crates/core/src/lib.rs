#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod concentration;
pub mod data_ingest;
pub mod harness;
pub mod optimizers;
pub mod problems;
pub mod samplers;
pub mod stationarity;
pub mod stats;
pub mod vecops;
