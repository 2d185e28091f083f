use serde::{Deserialize, Serialize};

use crate::dram::Device;
use crate::oracle::DisturbanceState;
use crate::profile::{Bucket, VulnerabilityProfile, WCDP_HAMMERS};

/// How many neighbors a single-sided hammer of one row disturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowSignature {
    pub bank: usize,
    pub row: u32,
    pub disturbed: u8,
    /// First or last row of the bank: one-sided for a trivial reason.
    pub bank_edge: bool,
}

/// Hammers every row of `bank` on its own and counts the neighbors that
/// flip. Aggressors only couple to victims inside their subarray, so the
/// rows on either side of a subarray boundary disturb one neighbor instead
/// of two.
pub fn single_sided_scan(device: &Device, profile: &VulnerabilityProfile, bank: usize) -> Vec<RowSignature> {
    single_sided_scan_with(device, profile, bank, WCDP_HAMMERS)
}

pub fn single_sided_scan_with(
    device: &Device,
    profile: &VulnerabilityProfile,
    bank: usize,
    hammers: u32,
) -> Vec<RowSignature> {
    let rows = device.geometry().rows_per_bank;
    let mut state = DisturbanceState::new(profile.banks(), rows).with_clock_period(device.timing().clock_period);
    if let Some(layout) = device.subarrays() {
        state = state.with_subarray_coupling(layout.clone());
    }
    let on_time = Bucket::Ns36.ns();
    (0..rows)
        .map(|row| {
            state.record_activations(bank, row, hammers, on_time);
            let victims: Vec<u32> = state.victims_of(row).collect();
            let disturbed = victims.iter().filter(|&&v| state.check_flip(profile, bank, v)).count() as u8;
            for v in victims {
                state.refresh_row(bank, v, 0);
            }
            RowSignature { bank, row, disturbed, bank_edge: row == 0 || row + 1 == rows }
        })
        .collect()
}
