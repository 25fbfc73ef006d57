//! Command implementations, dataset I/O, report formatting, and the
//! synthetic benchmark generator behind the `dagc` binary.

pub mod commands;
pub mod data;
pub mod report;
pub mod synth;
