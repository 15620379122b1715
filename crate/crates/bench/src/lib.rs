//! Shared fixtures for the criterion benches.

use crowdpulse_core::{run, EventLog, Params, SimConfig};

/// A simulated platform at the Platform B magnitudes.
pub fn platform(days: f64, seed: u64) -> EventLog {
    run(&Params::PLATFORM_B, &SimConfig::new(days, seed)).expect("reference parameters simulate").log
}
