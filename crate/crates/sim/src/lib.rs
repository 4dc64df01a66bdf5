//! Deterministic simulator, operator protocol and tooling around the
//! skyframe planning core.

pub mod bench;
pub mod error;
pub mod export;
pub mod metrics;
pub mod protocol;
pub mod server;
pub mod scenario;
pub mod sim;
pub mod telemetry;
pub mod trace;

pub use error::{SimError, SimResult};
pub use sim::Sim;
