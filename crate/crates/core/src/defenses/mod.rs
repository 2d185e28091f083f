//! Read-disturbance defenses behind one interface.
//!
//! A defense sees every row activation (demand and preventive) together
//! with the threshold that applies to it, and answers with preventive
//! actions. Rows are physical rows; defenses that relocate data also expose
//! the logical-to-physical mapping through [`Defense::translate`].
//!
//! Triggers are placed so that no victim can accumulate `threshold`
//! activations from one neighbor between two of its refreshes. Epochs are
//! aligned with the periodic refresh (the caller resets a defense on the REF
//! that starts each epoch), so a victim's refresh interval overlaps at most
//! two counter epochs. Counter-based defenses therefore act at
//! `floor(t / 2)`: at most `floor(t/2) - 1` activations survive the first
//! epoch and `floor(t/2)` reach the victim in the second, which stays below `t`.

mod aqua;
mod blockhammer;
mod hydra;
mod para;
mod rrs;
mod tracker;

pub use aqua::Aqua;
pub use blockhammer::{BlockHammer, CountingBloomFilter};
pub use hydra::Hydra;
pub use para::Para;
pub use rrs::Rrs;
pub use tracker::SpaceSaving;

use serde::{Deserialize, Serialize};

use crate::dram::{DeviceGeometry, TimingCycles};
use crate::error::ConfigError;
use crate::profile::HcFirst;

/// A preventive action. Row numbers are physical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DefenseAction {
    /// Activate and restore each row.
    RefreshRows { bank: usize, rows: Vec<u32> },
    /// The row may not be activated before `until`.
    ThrottleUntil { bank: usize, row: u32, until: u64 },
    /// Exchange the contents of two rows.
    SwapRows { bank: usize, a: u32, b: u32 },
    /// Move `src` into quarantine slot `dst`; the slot's previous occupant,
    /// if any, first returns to its home row `evict_to`.
    MigrateRow { bank: usize, src: u32, dst: u32, evict_to: Option<u32> },
    /// Off-chip counter fetch and writeback through one metadata row.
    CounterTransfer { bank: usize },
}

/// How a preventive activation uses the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImpliedAct {
    /// Open and close: restores the row.
    Refresh(u32),
    /// Full-row read or write during a relocation.
    Transfer(u32),
}

impl ImpliedAct {
    pub fn row(self) -> u32 {
        match self {
            ImpliedAct::Refresh(r) | ImpliedAct::Transfer(r) => r,
        }
    }
}

impl DefenseAction {
    pub fn bank(&self) -> usize {
        match *self {
            DefenseAction::RefreshRows { bank, .. }
            | DefenseAction::ThrottleUntil { bank, .. }
            | DefenseAction::SwapRows { bank, .. }
            | DefenseAction::MigrateRow { bank, .. }
            | DefenseAction::CounterTransfer { bank } => bank,
        }
    }

    /// Row activations the action performs, in order.
    pub fn implied_acts(&self) -> Vec<ImpliedAct> {
        use ImpliedAct::*;
        match self {
            DefenseAction::RefreshRows { rows, .. } => rows.iter().map(|&r| Refresh(r)).collect(),
            DefenseAction::ThrottleUntil { .. } | DefenseAction::CounterTransfer { .. } => Vec::new(),
            // buffer both rows, then write each back to the other
            DefenseAction::SwapRows { a, b, .. } => vec![Transfer(*a), Transfer(*b), Transfer(*a), Transfer(*b)],
            DefenseAction::MigrateRow { src, dst, evict_to, .. } => {
                let mut v = Vec::with_capacity(4);
                if let Some(home) = evict_to {
                    v.extend([Transfer(*dst), Transfer(*home)]);
                }
                v.extend([Transfer(*src), Transfer(*dst)]);
                v
            }
        }
    }

    /// Bank busy time spent on the action.
    pub fn cost_cycles(&self, t: &TimingCycles, columns: u32) -> u64 {
        let per: u64 = self.implied_acts().iter().map(|a| act_hold_cycles(*a, t, columns) + t.rp).sum();
        match self {
            DefenseAction::CounterTransfer { .. } => metadata_cycles(t),
            _ => per,
        }
    }
}

/// ACT-to-PRE time of a preventive activation. Transfers stream every
/// column of the row.
pub fn act_hold_cycles(act: ImpliedAct, t: &TimingCycles, columns: u32) -> u64 {
    match act {
        ImpliedAct::Refresh(_) => t.ras,
        ImpliedAct::Transfer(_) => t.ras.max(t.rcd + columns as u64 * t.ccd),
    }
}

/// One metadata row activation carrying a counter read and its writeback.
pub fn metadata_cycles(t: &TimingCycles) -> u64 {
    t.ras.max(t.rcd + 2 * t.ccd + t.cwl) + t.rp
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefenseKind {
    Para,
    BlockHammer,
    Hydra,
    Rrs,
    Aqua,
}

impl DefenseKind {
    pub const ALL: [DefenseKind; 5] =
        [DefenseKind::Para, DefenseKind::BlockHammer, DefenseKind::Hydra, DefenseKind::Rrs, DefenseKind::Aqua];

    pub fn name(self) -> &'static str {
        match self {
            DefenseKind::Para => "para",
            DefenseKind::BlockHammer => "blockhammer",
            DefenseKind::Hydra => "hydra",
            DefenseKind::Rrs => "rrs",
            DefenseKind::Aqua => "aqua",
        }
    }

    pub fn is_deterministic(self) -> bool {
        self != DefenseKind::Para
    }
}

impl std::str::FromStr for DefenseKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DefenseKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown defense {s:?}"))
    }
}

/// Counts of actions a defense has taken.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefenseStats {
    pub refreshes: u64,
    pub throttles: u64,
    pub swaps: u64,
    pub migrations: u64,
    /// Quarantine full, refreshed instead of migrating.
    pub fallbacks: u64,
    pub counter_transfers: u64,
}

impl DefenseStats {
    /// Refreshes, throttles, swaps and migrations.
    pub fn preventive(&self) -> u64 {
        self.refreshes + self.throttles + self.swaps + self.migrations
    }
}

pub trait Defense: std::fmt::Debug + Send {
    fn kind(&self) -> DefenseKind;

    /// Called for every activation, demand or preventive, when it is issued.
    fn on_activation(&mut self, bank: usize, row: u32, cycle: u64, threshold: HcFirst, out: &mut Vec<DefenseAction>);

    /// Asked before a demand activation; `Some(cycle)` defers it until then.
    fn gate(&mut self, _bank: usize, _row: u32, _cycle: u64, _threshold: HcFirst) -> Option<u64> {
        None
    }

    /// Start of a new counting epoch.
    fn epoch_reset(&mut self, cycle: u64);

    /// Epochs per refresh window.
    fn epochs_per_window(&self) -> u64 {
        1
    }

    /// Physical row currently holding logical `row`.
    fn translate(&self, _bank: usize, row: u32) -> u32 {
        row
    }

    fn stats(&self) -> DefenseStats;
}

/// Activation count at which counter-based defenses act.
pub fn action_trigger(threshold: HcFirst) -> Option<u32> {
    threshold.get().map(|t| (t / 2).max(1))
}

/// Neighbors of `row` inside a bank of `rows` rows.
pub fn neighbors(row: u32, rows: u32) -> Vec<u32> {
    let mut v = Vec::with_capacity(2);
    if row > 0 {
        v.push(row - 1);
    }
    if row + 1 < rows {
        v.push(row + 1);
    }
    v
}

/// Rows at the top of each bank set aside for defense metadata and
/// quarantine; workloads only address the rows below.
pub fn reserved_rows(rows_per_bank: u32) -> u32 {
    (rows_per_bank / 16).max(1)
}

pub fn usable_rows(rows_per_bank: u32) -> u32 {
    rows_per_bank - reserved_rows(rows_per_bank)
}

/// What a defense needs to know about the system it protects.
#[derive(Debug, Clone, Copy)]
pub struct DefenseContext {
    pub geometry: DeviceGeometry,
    pub timing: TimingCycles,
    /// Worst-case threshold over the device.
    pub base_threshold: HcFirst,
    pub seed: u64,
}

fn default_para_prob() -> f64 {
    1e-4
}
fn default_cbf_counters() -> usize {
    1024
}
fn default_cbf_hashes() -> usize {
    4
}
fn default_rcc() -> usize {
    4096
}
fn default_group() -> u32 {
    128
}
fn default_tracker() -> usize {
    4096
}
fn default_quarantine() -> u32 {
    16
}

/// Epoch length selector; `auto` means half a refresh window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpochSpec {
    #[default]
    Auto,
}

/// JSON-selectable defense parameters, e.g.
/// `{"defense":"blockhammer","cbf_counters":1024,"epoch":"auto"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "defense", rename_all = "lowercase", deny_unknown_fields)]
pub enum DefenseConfig {
    Para {
        #[serde(default = "default_para_prob")]
        target_failure_prob: f64,
    },
    #[serde(rename = "blockhammer")]
    BlockHammer {
        #[serde(default = "default_cbf_counters")]
        cbf_counters: usize,
        #[serde(default = "default_cbf_hashes")]
        cbf_hashes: usize,
        #[serde(default)]
        epoch: EpochSpec,
    },
    Hydra {
        #[serde(default = "default_rcc")]
        rcc_entries: usize,
        #[serde(default = "default_group")]
        group_size: u32,
    },
    Rrs {
        #[serde(default = "default_tracker")]
        tracker_entries: usize,
    },
    Aqua {
        #[serde(default = "default_tracker")]
        tracker_entries: usize,
        /// Quarantine holds 1/`quarantine_divisor` of each bank.
        #[serde(default = "default_quarantine")]
        quarantine_divisor: u32,
    },
}

impl DefenseConfig {
    pub fn default_for(kind: DefenseKind) -> Self {
        let json = format!("{{\"defense\":\"{}\"}}", kind.name());
        serde_json::from_str(&json).expect("defaults parse")
    }

    pub fn kind(&self) -> DefenseKind {
        match self {
            DefenseConfig::Para { .. } => DefenseKind::Para,
            DefenseConfig::BlockHammer { .. } => DefenseKind::BlockHammer,
            DefenseConfig::Hydra { .. } => DefenseKind::Hydra,
            DefenseConfig::Rrs { .. } => DefenseKind::Rrs,
            DefenseConfig::Aqua { .. } => DefenseKind::Aqua,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parameter(e.to_string()))
    }

    pub fn build(&self, ctx: &DefenseContext) -> Result<Box<dyn Defense>, ConfigError> {
        let bad = |m: &str| Err(ConfigError::Parameter(m.to_string()));
        Ok(match *self {
            DefenseConfig::Para { target_failure_prob } => {
                if !(target_failure_prob > 0.0 && target_failure_prob < 1.0) {
                    return bad("target_failure_prob must be in (0, 1)");
                }
                Box::new(Para::new(target_failure_prob, ctx))
            }
            DefenseConfig::BlockHammer { cbf_counters, cbf_hashes, .. } => {
                if cbf_counters == 0 || cbf_hashes == 0 {
                    return bad("bloom filter needs counters and hashes");
                }
                Box::new(BlockHammer::new(cbf_counters, cbf_hashes, ctx))
            }
            DefenseConfig::Hydra { rcc_entries, group_size } => {
                if rcc_entries == 0 || group_size == 0 {
                    return bad("hydra needs a cache and a group size");
                }
                Box::new(Hydra::new(rcc_entries, group_size, ctx))
            }
            DefenseConfig::Rrs { tracker_entries } => {
                if tracker_entries == 0 {
                    return bad("tracker needs entries");
                }
                Box::new(Rrs::new(tracker_entries, ctx))
            }
            DefenseConfig::Aqua { tracker_entries, quarantine_divisor } => {
                if tracker_entries == 0 || quarantine_divisor < 2 {
                    return bad("aqua needs tracker entries and a quarantine divisor >= 2");
                }
                Box::new(Aqua::new(tracker_entries, quarantine_divisor, ctx))
            }
        })
    }
}

/// SplitMix64 finalizer, used for filter hashing.
pub(crate) fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[cfg(test)]
pub(crate) mod testkit {
    use super::*;
    use crate::dram::TimingParams;

    pub fn ctx(banks: u32, rows: u32, base: u32) -> DefenseContext {
        DefenseContext {
            geometry: DeviceGeometry::desk(banks, rows),
            timing: TimingParams::default().in_cycles(),
            base_threshold: if base == u32::MAX { HcFirst::NONE } else { HcFirst::new(base) },
            seed: 1,
        }
    }

    /// Feeds a stream of activations, applying refresh and swap actions to a
    /// side-count model of the victims; returns the largest exposure seen.
    pub fn max_exposure(d: &mut dyn Defense, rows: u32, stream: &[u32], threshold: u32) -> u32 {
        let mut left = vec![0u32; rows as usize];
        let mut right = vec![0u32; rows as usize];
        let mut worst = 0;
        let mut queue: std::collections::VecDeque<u32> = stream.iter().copied().collect();
        let mut actions = Vec::new();
        let mut pending_work: std::collections::VecDeque<ImpliedAct> = Default::default();
        let mut cycle = 0;
        loop {
            let (row, refresh) = if let Some(a) = pending_work.pop_front() {
                (a.row(), matches!(a, ImpliedAct::Refresh(_)))
            } else if let Some(r) = queue.pop_front() {
                (d.translate(0, r), false)
            } else {
                break;
            };
            cycle += 1;
            d.on_activation(0, row, cycle, HcFirst::new(threshold), &mut actions);
            for v in neighbors(row, rows) {
                if v > row {
                    left[v as usize] += 1;
                    worst = worst.max(left[v as usize]);
                } else {
                    right[v as usize] += 1;
                    worst = worst.max(right[v as usize]);
                }
            }
            if refresh {
                left[row as usize] = 0;
                right[row as usize] = 0;
            }
            for a in actions.drain(..) {
                pending_work.extend(a.implied_acts());
            }
        }
        worst
    }
}
