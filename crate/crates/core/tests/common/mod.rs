//! Checks shared by the module tests and the acceptance harness.
#![allow(dead_code)]

pub mod blocking;
pub mod composed;
pub mod metric_oracle;
pub mod pcm_checks;
