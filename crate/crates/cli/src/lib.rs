//! Scenario tooling on top of `printcan-core`: a line-oriented scenario
//! format, a candump-compatible trace writer, an asset-impact reporter, and
//! the runner that ties them together for the `printcan` binary.

pub mod report;
pub mod runner;
pub mod scenario;
pub mod trace;
