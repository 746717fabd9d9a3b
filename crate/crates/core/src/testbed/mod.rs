//! Orchestration and measurement: scenario files, multi-process runs,
//! transcript capture, latency breakdowns, the analytic worker-scalability
//! model, and dialing benchmarks with CSV emission.

pub mod bench;
pub mod csvout;
pub mod latency;
pub mod runner;
pub mod scalability;
pub mod scenario;
pub mod transcript;

pub use bench::{bench_dialing, linear_fit, BenchStats, DialingMode};
pub use latency::{find_snippet_length, mouth_to_ear, LatencyBreakdown};
pub use runner::{run_scenario, BinPaths, RunArtifacts, RunOptions, TestbedError};
pub use scalability::{analytic_scalability, ScalabilityParams};
pub use scenario::{parse_scenario, Scenario, ScenarioConfig};
