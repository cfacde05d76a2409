//! Benchmark harness for the online GP state-space learner: synthetic
//! experiment generators, end-to-end runners, and result emission.

pub mod config;
pub mod data;
pub mod emit;
pub mod learner;
