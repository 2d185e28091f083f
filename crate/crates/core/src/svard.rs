//! Per-row thresholds for defenses, taken from a binned vulnerability
//! profile instead of the device-wide worst case.
//!
//! An activation of row `r` disturbs `r - 1` and `r + 1`, so the threshold a
//! defense applies to it is the smaller of the two victims' bin thresholds.
//! Bins are built over the 2 us on-time bucket, the most pessimistic one, so
//! a threshold holds however long the aggressor stays open.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::defenses::{neighbors, Defense, DefenseAction};
use crate::error::ConfigError;
use crate::profile::{BinTable, Bucket, HcFirst, VulnerabilityProfile};

/// On-time bucket thresholds are drawn from.
pub const THRESHOLD_BUCKET: Bucket = Bucket::Us2;

/// Bits of bin id stored per row.
pub const BIN_ID_BITS: u64 = 4;

/// Where the per-row bin ids live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SvardStorage {
    /// A table in the memory controller; lookups overlap the activation.
    #[serde(rename = "table")]
    ControllerTable,
    /// Alongside each row in DRAM, read with the row's first access.
    #[serde(rename = "indram")]
    InDramMetadata,
}

impl SvardStorage {
    pub fn name(self) -> &'static str {
        match self {
            SvardStorage::ControllerTable => "table",
            SvardStorage::InDramMetadata => "indram",
        }
    }

    /// Parses `off`, `table` or `indram`; `off` yields `None`.
    pub fn parse_flag(s: &str) -> Result<Option<Self>, ConfigError> {
        match s {
            "off" => Ok(None),
            "table" => Ok(Some(SvardStorage::ControllerTable)),
            "indram" => Ok(Some(SvardStorage::InDramMetadata)),
            _ => Err(ConfigError::Parameter(format!("svard must be off, table or indram, got {s:?}"))),
        }
    }
}

/// Immutable bin assignment shared by every run over the same profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SvardConfig {
    pub storage: SvardStorage,
    pub bins: BinTable,
    rows_per_bank: u32,
    ids: Vec<u8>,
    /// Per row, the bin id of its weakest neighbor.
    activation_ids: Vec<u8>,
}

impl SvardConfig {
    /// Bins `profile` into at most `bin_count` bins.
    pub fn from_profile(
        profile: &VulnerabilityProfile,
        bin_count: usize,
        storage: SvardStorage,
    ) -> Result<Self, ConfigError> {
        let (binned, table) = profile.with_bins(bin_count, THRESHOLD_BUCKET)?;
        Self::from_binned(&binned, table, storage)
    }

    /// Uses the bin ids already stored in `profile`.
    pub fn from_binned(profile: &VulnerabilityProfile, bins: BinTable, storage: SvardStorage) -> Result<Self, ConfigError> {
        let table = BinTable::new(bins.bucket, bins.thresholds)?;
        let ids: Vec<u8> = profile.rows.iter().map(|r| r.bin_id).collect();
        if let Some(bad) = ids.iter().find(|&&id| id as usize >= table.len()) {
            return Err(ConfigError::Bins(format!("bin id {bad} outside a {}-bin table", table.len())));
        }
        for (i, r) in profile.rows.iter().enumerate() {
            if table.threshold(ids[i]) > r.hcfirst(table.bucket) {
                return Err(ConfigError::Bins(format!("row {i} is binned above its HC_first")));
            }
        }
        let rpb = profile.rows_per_bank();
        let activation_ids = (0..ids.len())
            .map(|i| {
                let base = i - i % rpb as usize;
                let row = (i % rpb as usize) as u32;
                neighbors(row, rpb).into_iter().map(|n| ids[base + n as usize]).min().unwrap_or(u8::MAX)
            })
            .collect();
        Ok(SvardConfig { storage, bins: table, rows_per_bank: rpb, ids, activation_ids })
    }

    fn idx(&self, bank: usize, row: u32) -> usize {
        bank * self.rows_per_bank as usize + row as usize
    }

    pub fn bin_id(&self, bank: usize, row: u32) -> u8 {
        self.ids[self.idx(bank, row)]
    }

    /// The row's own bin threshold.
    pub fn row_threshold(&self, bank: usize, row: u32) -> HcFirst {
        self.bins.threshold(self.bin_id(bank, row))
    }

    /// Threshold for activating `row`: its weakest neighbor's.
    pub fn activation_threshold(&self, bank: usize, row: u32) -> HcFirst {
        match self.activation_ids[self.idx(bank, row)] {
            u8::MAX => HcFirst::NONE,
            id => self.bins.threshold(id),
        }
    }
}

/// Lookup and metadata-traffic counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SvardCounters {
    pub lookups: u64,
    pub metadata_bits: u64,
}

#[derive(Debug, Clone)]
pub struct SvardState {
    config: Arc<SvardConfig>,
    counters: SvardCounters,
    touched: HashSet<(usize, u32)>,
}

impl SvardState {
    pub fn new(config: Arc<SvardConfig>) -> Self {
        SvardState { config, counters: SvardCounters::default(), touched: HashSet::new() }
    }

    pub fn config(&self) -> &SvardConfig {
        &self.config
    }

    pub fn counters(&self) -> SvardCounters {
        self.counters
    }

    fn account(&mut self, bank: usize, row: u32) {
        self.counters.lookups += 1;
        if self.config.storage == SvardStorage::InDramMetadata && self.touched.insert((bank, row)) {
            self.counters.metadata_bits += BIN_ID_BITS;
        }
    }

    /// The row's bin threshold. Adds no latency in either storage mode;
    /// in-DRAM storage logs the id's bits on the row's first access.
    pub fn svard_lookup(&mut self, bank: usize, row: u32) -> HcFirst {
        self.account(bank, row);
        self.config.row_threshold(bank, row)
    }

    /// Threshold to hand a defense for an activation of `row`.
    pub fn threshold_for_activation(&mut self, bank: usize, row: u32) -> HcFirst {
        self.account(bank, row);
        self.config.activation_threshold(bank, row)
    }
}

/// Where a defense's thresholds come from.
#[derive(Debug, Clone)]
pub enum ThresholdSource {
    /// Every row is treated as the device's weakest.
    Baseline(HcFirst),
    Svard(SvardState),
}

impl ThresholdSource {
    /// Worst-case threshold of `profile` in [`THRESHOLD_BUCKET`].
    pub fn baseline(profile: &VulnerabilityProfile) -> Self {
        ThresholdSource::Baseline(profile.min_hcfirst(THRESHOLD_BUCKET))
    }

    pub fn threshold(&mut self, bank: usize, row: u32) -> HcFirst {
        match self {
            ThresholdSource::Baseline(t) => *t,
            ThresholdSource::Svard(s) => s.threshold_for_activation(bank, row),
        }
    }

    pub fn counters(&self) -> SvardCounters {
        match self {
            ThresholdSource::Baseline(_) => SvardCounters::default(),
            ThresholdSource::Svard(s) => s.counters(),
        }
    }
}

/// A defense fed with per-activation thresholds.
#[derive(Debug)]
pub struct Adapted {
    pub defense: Box<dyn Defense>,
    pub source: ThresholdSource,
}

/// Wraps `defense` so each activation is judged against `source`.
pub fn attach(defense: Box<dyn Defense>, source: ThresholdSource) -> Adapted {
    Adapted { defense, source }
}

impl Adapted {
    pub fn on_activation(&mut self, bank: usize, row: u32, cycle: u64, out: &mut Vec<DefenseAction>) {
        let t = self.source.threshold(bank, row);
        self.defense.on_activation(bank, row, cycle, t, out);
    }

    pub fn gate(&mut self, bank: usize, row: u32, cycle: u64) -> Option<u64> {
        let t = self.source.threshold(bank, row);
        self.defense.gate(bank, row, cycle, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defenses::{DefenseConfig, DefenseContext, DefenseKind};
    use crate::dram::{DeviceGeometry, TimingParams};
    use crate::oracle::DataPattern;
    use crate::profile::{generate_profile, scale_profile, ProfileTemplate, RowVulnerability};

    fn profile(values: &[u32]) -> VulnerabilityProfile {
        let rows = values
            .iter()
            .map(|&v| RowVulnerability {
                hcfirst: [HcFirst::new(v); 3],
                ber_at_128k: 0.01,
                wcdp: DataPattern::Rs,
                bin_id: 0,
            })
            .collect();
        VulnerabilityProfile { geometry: DeviceGeometry::desk(1, values.len() as u32), rows, seed: 0, template: None }
    }

    #[test]
    fn single_bin_is_baseline() {
        let p = profile(&[300, 64, 128, 1000, 500, 700, 900, 100]);
        let cfg = Arc::new(SvardConfig::from_profile(&p, 1, SvardStorage::ControllerTable).unwrap());
        let mut s = ThresholdSource::Svard(SvardState::new(cfg));
        let mut b = ThresholdSource::baseline(&p);
        for r in 0..8 {
            assert_eq!(s.threshold(0, r), HcFirst::new(64));
            assert_eq!(b.threshold(0, r), HcFirst::new(64));
        }
    }

    #[test]
    fn activation_uses_weakest_neighbor() {
        let p = profile(&[300, 64, 128, 1000, 500, 700, 900, 100]);
        let cfg = SvardConfig::from_profile(&p, 16, SvardStorage::ControllerTable).unwrap();
        assert_eq!(cfg.row_threshold(0, 3), HcFirst::new(1000));
        assert_eq!(cfg.activation_threshold(0, 3), HcFirst::new(128));
        assert_eq!(cfg.activation_threshold(0, 0), HcFirst::new(64));
        assert_eq!(cfg.activation_threshold(0, 7), HcFirst::new(900));
        assert_eq!(cfg.activation_threshold(0, 5), HcFirst::new(500));
    }

    #[test]
    fn indram_logs_four_bits_per_distinct_row() {
        let p = profile(&[300, 64, 128, 1000]);
        let cfg = Arc::new(SvardConfig::from_profile(&p, 4, SvardStorage::InDramMetadata).unwrap());
        let mut s = SvardState::new(cfg.clone());
        for r in [1, 2, 1, 1, 3, 2] {
            s.threshold_for_activation(0, r);
        }
        assert_eq!(s.counters(), SvardCounters { lookups: 6, metadata_bits: 12 });
        let mut t = SvardState::new(Arc::new(SvardConfig { storage: SvardStorage::ControllerTable, ..(*cfg).clone() }));
        t.svard_lookup(0, 1);
        assert_eq!(t.counters().metadata_bits, 0);
    }

    #[test]
    fn rejects_oversized_or_unsafe_tables() {
        let p = profile(&[300, 64]);
        let many: Vec<HcFirst> = (1..=17).map(HcFirst::new).collect();
        assert!(SvardConfig::from_binned(&p, BinTable { bucket: Bucket::Us2, thresholds: many }, SvardStorage::ControllerTable).is_err());
        let mut q = p.clone();
        q.rows[1].bin_id = 1;
        let t = BinTable::new(Bucket::Us2, vec![HcFirst::new(64), HcFirst::new(300)]).unwrap();
        assert!(SvardConfig::from_binned(&q, t, SvardStorage::ControllerTable).is_err());
        assert_eq!(SvardStorage::parse_flag("off").unwrap(), None);
        assert!(SvardStorage::parse_flag("on").is_err());
    }

    #[test]
    fn thresholds_never_exceed_true_hcfirst() {
        let t = ProfileTemplate::preset("S0").unwrap();
        let p = scale_profile(&generate_profile(&t, DeviceGeometry::desk(2, 2048), 3).unwrap(), 128);
        let cfg = SvardConfig::from_profile(&p, 16, SvardStorage::ControllerTable).unwrap();
        for (bank, row, v) in p.iter() {
            assert!(cfg.row_threshold(bank, row) <= v.hcfirst(Bucket::Us2));
            for n in neighbors(row, p.rows_per_bank()) {
                assert!(cfg.activation_threshold(bank, row) <= p.hcfirst(bank, n, Bucket::Us2));
            }
        }
    }

    #[test]
    fn rrs_swaps_only_at_own_bin_threshold() {
        // row 10's neighbors are strong; row 40's are weak
        let mut vals = vec![4096u32; 64];
        vals[39] = 64;
        vals[41] = 64;
        let p = profile(&vals);
        let cfg = Arc::new(SvardConfig::from_profile(&p, 2, SvardStorage::ControllerTable).unwrap());
        let ctx = DefenseContext {
            geometry: p.geometry,
            timing: TimingParams::default().in_cycles(),
            base_threshold: HcFirst::new(64),
            seed: 5,
        };
        let d = DefenseConfig::default_for(DefenseKind::Rrs).build(&ctx).unwrap();
        let mut a = attach(d, ThresholdSource::Svard(SvardState::new(cfg)));
        let mut out = Vec::new();
        for i in 0..1000 {
            a.on_activation(0, 10, i, &mut out);
        }
        assert!(out.is_empty());
        for i in 0..32 {
            a.on_activation(0, 40, i, &mut out);
        }
        assert_eq!(a.defense.stats().swaps, 1);
    }
}
