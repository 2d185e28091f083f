//! Ground-truth read-disturbance model.
//!
//! Every victim row tracks how often each of its two neighbors has been
//! activated since the victim was last refreshed, and the longest on-time
//! bucket among those activations. A victim flips once the larger side count
//! reaches its HC_first for that bucket. Refreshing a row clears its exposure.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dram::{RefreshStride, SubarrayLayout, TimingParams};
use crate::error::IoError;
use crate::profile::{Bucket, HcFirst, VulnerabilityProfile};

/// The six data patterns used for hammer tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DataPattern {
    #[serde(rename = "RS")]
    Rs,
    #[serde(rename = "RSI")]
    Rsi,
    #[serde(rename = "CS")]
    Cs,
    #[serde(rename = "CSI")]
    Csi,
    #[serde(rename = "CB")]
    Cb,
    #[serde(rename = "CBI")]
    Cbi,
}

impl DataPattern {
    /// Table order, also the tie-break order.
    pub const ALL: [DataPattern; 6] =
        [DataPattern::Rs, DataPattern::Rsi, DataPattern::Cs, DataPattern::Csi, DataPattern::Cb, DataPattern::Cbi];

    pub fn name(self) -> &'static str {
        match self {
            DataPattern::Rs => "RS",
            DataPattern::Rsi => "RSI",
            DataPattern::Cs => "CS",
            DataPattern::Csi => "CSI",
            DataPattern::Cb => "CB",
            DataPattern::Cbi => "CBI",
        }
    }

    pub fn aggressor_byte(self) -> u8 {
        match self {
            DataPattern::Rs => 0xFF,
            DataPattern::Rsi => 0x00,
            DataPattern::Cs | DataPattern::Cb => 0xAA,
            DataPattern::Csi | DataPattern::Cbi => 0x55,
        }
    }

    pub fn victim_byte(self) -> u8 {
        match self {
            DataPattern::Rs => 0x00,
            DataPattern::Rsi => 0xFF,
            DataPattern::Cs | DataPattern::Cbi => 0xAA,
            DataPattern::Csi | DataPattern::Cb => 0x55,
        }
    }
}

impl fmt::Display for DataPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DataPattern {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DataPattern::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown data pattern {s:?}"))
    }
}

/// Smallest bucket whose nominal on-time, rounded up to whole clock cycles,
/// covers `ns`; anything longer than the largest bucket maps to it.
pub fn bucket_for_on_time(ns: f64, clock_period: f64) -> Bucket {
    const EPS: f64 = 1e-6;
    let edge = |b: Bucket| ((b.ns() / clock_period) - EPS).ceil() * clock_period;
    Bucket::ALL.into_iter().find(|&b| ns <= edge(b) + EPS).unwrap_or(Bucket::Us2)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VictimRecord {
    /// Activations of lower-addressed aggressors since the last refresh.
    pub left: u32,
    /// Activations of higher-addressed aggressors since the last refresh.
    pub right: u32,
    /// Longest on-time bucket among contributing activations.
    pub bucket: Option<Bucket>,
    pub last_refresh: u64,
    /// Already reported as flipped in this exposure window.
    pub flipped: bool,
}

impl VictimRecord {
    pub fn effective_hammers(&self) -> u32 {
        self.left.max(self.right)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipRecord {
    pub cycle: u64,
    pub bank: usize,
    pub row: u32,
    pub effective_hammers: u32,
    pub bucket: Bucket,
    pub hcfirst: HcFirst,
}

/// Per-row exposure of one device.
#[derive(Debug, Clone)]
pub struct DisturbanceState {
    banks: usize,
    rows_per_bank: u32,
    radius: u32,
    clock_period: f64,
    victims: Vec<VictimRecord>,
    coupling: Option<SubarrayLayout>,
    flips: Vec<FlipRecord>,
}

impl DisturbanceState {
    pub fn new(banks: usize, rows_per_bank: u32) -> Self {
        DisturbanceState {
            banks,
            rows_per_bank,
            radius: 1,
            clock_period: TimingParams::default().clock_period,
            victims: vec![VictimRecord::default(); banks * rows_per_bank as usize],
            coupling: None,
            flips: Vec::new(),
        }
    }

    pub fn for_profile(profile: &VulnerabilityProfile) -> Self {
        Self::new(profile.banks(), profile.rows_per_bank())
    }

    /// Disturb rows up to `radius` away instead of only direct neighbors.
    pub fn with_blast_radius(mut self, radius: u32) -> Self {
        self.radius = radius.max(1);
        self
    }

    /// Clock used to classify on-times into buckets.
    pub fn with_clock_period(mut self, ns: f64) -> Self {
        self.clock_period = ns;
        self
    }

    /// Aggressors only disturb victims inside their own subarray.
    pub fn with_subarray_coupling(mut self, layout: SubarrayLayout) -> Self {
        self.coupling = Some(layout);
        self
    }

    pub fn banks(&self) -> usize {
        self.banks
    }

    pub fn rows_per_bank(&self) -> u32 {
        self.rows_per_bank
    }

    fn idx(&self, bank: usize, row: u32) -> usize {
        debug_assert!(bank < self.banks && row < self.rows_per_bank);
        bank * self.rows_per_bank as usize + row as usize
    }

    pub fn victim(&self, bank: usize, row: u32) -> &VictimRecord {
        &self.victims[self.idx(bank, row)]
    }

    pub fn effective_hammers(&self, bank: usize, row: u32) -> u32 {
        self.victim(bank, row).effective_hammers()
    }

    fn coupled(&self, a: u32, b: u32) -> bool {
        self.coupling.as_ref().map_or(true, |l| l.same_subarray(a, b))
    }

    /// Victims of an activation of `row`, nearest first.
    pub fn victims_of(&self, row: u32) -> impl Iterator<Item = u32> + '_ {
        (1..=self.radius).flat_map(move |d| {
            let below = row.checked_sub(d);
            let above = row.checked_add(d).filter(|&r| r < self.rows_per_bank);
            below.into_iter().chain(above)
        })
        .filter(move |&v| self.coupled(row, v))
    }

    /// Adds `count` activations of `row` with the given on-time.
    pub fn record_activations(&mut self, bank: usize, row: u32, count: u32, on_time_ns: f64) {
        if count == 0 {
            return;
        }
        let bucket = bucket_for_on_time(on_time_ns, self.clock_period);
        let victims: Vec<u32> = self.victims_of(row).collect();
        for v in victims {
            let i = self.idx(bank, v);
            let rec = &mut self.victims[i];
            if v > row {
                rec.left = rec.left.saturating_add(count);
            } else {
                rec.right = rec.right.saturating_add(count);
            }
            rec.bucket = rec.bucket.max(Some(bucket));
        }
    }

    /// Records one activation; returns the affected victim rows.
    pub fn record_activation(&mut self, bank: usize, row: u32, on_time_ns: f64) -> Vec<u32> {
        self.record_activations(bank, row, 1, on_time_ns);
        self.victims_of(row).collect()
    }

    /// Whether `row` currently holds a bitflip under `profile`.
    pub fn check_flip(&self, profile: &VulnerabilityProfile, bank: usize, row: u32) -> bool {
        let rec = self.victim(bank, row);
        let hc = profile.hcfirst(bank, row, rec.bucket.unwrap_or(Bucket::Ns36));
        hc.get().is_some_and(|t| rec.effective_hammers() >= t)
    }

    /// Records one activation and logs any victim that newly flips.
    pub fn activate_and_check(
        &mut self,
        profile: &VulnerabilityProfile,
        bank: usize,
        row: u32,
        on_time_ns: f64,
        cycle: u64,
    ) -> usize {
        let victims = self.record_activation(bank, row, on_time_ns);
        let before = self.flips.len();
        for v in victims {
            self.log_if_flipped(profile, bank, v, cycle);
        }
        self.flips.len() - before
    }

    /// Appends a flip record for `row` if it flips and has not been logged
    /// since its last refresh.
    pub fn log_if_flipped(&mut self, profile: &VulnerabilityProfile, bank: usize, row: u32, cycle: u64) -> bool {
        let i = self.idx(bank, row);
        if self.victims[i].flipped || !self.check_flip(profile, bank, row) {
            return false;
        }
        let rec = &mut self.victims[i];
        rec.flipped = true;
        let bucket = rec.bucket.unwrap_or(Bucket::Ns36);
        self.flips.push(FlipRecord {
            cycle,
            bank,
            row,
            effective_hammers: rec.effective_hammers(),
            bucket,
            hcfirst: profile.hcfirst(bank, row, bucket),
        });
        true
    }

    pub fn refresh_row(&mut self, bank: usize, row: u32, cycle: u64) {
        let i = self.idx(bank, row);
        self.victims[i] = VictimRecord { last_refresh: cycle, ..VictimRecord::default() };
    }

    /// Applies a periodic REF stride to every bank.
    pub fn refresh_stride(&mut self, stride: &RefreshStride, cycle: u64) {
        for bank in 0..self.banks {
            for row in stride.rows() {
                self.refresh_row(bank, row, cycle);
            }
        }
    }

    pub fn flips(&self) -> &[FlipRecord] {
        &self.flips
    }

    pub fn flip_count(&self) -> usize {
        self.flips.len()
    }
}

/// Writes the flip log as CSV.
pub fn write_flip_log(flips: &[FlipRecord], path: &Path) -> Result<(), IoError> {
    let file = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["cycle", "bank", "row", "effective_hammers", "bucket", "hcfirst"])?;
    for f in flips {
        w.write_record([
            f.cycle.to_string(),
            f.bank.to_string(),
            f.row.to_string(),
            f.effective_hammers.to_string(),
            f.bucket.label().to_string(),
            f.hcfirst.to_string(),
        ])?;
    }
    w.flush().map_err(|e| IoError::io(path, e))?;
    let mut inner = w.into_inner().map_err(|e| IoError::Malformed(e.to_string()))?;
    inner.flush().map_err(|e| IoError::io(path, e))
}
