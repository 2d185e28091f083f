//! Trace-driven simulation of DRAM read disturbance and its defenses.

pub mod analysis;
pub mod characterize;
pub mod defenses;
pub mod dram;
pub mod error;
pub mod oracle;
pub mod profile;
pub mod sim;
pub mod svard;
