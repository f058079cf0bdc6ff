//! Command implementations behind the `board` binary.

pub mod scenario;
pub mod sim;
pub mod workload;
