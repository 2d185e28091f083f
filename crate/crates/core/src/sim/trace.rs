//! Synthetic per-core request streams and the address mapping they use.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::defenses::usable_rows;
use crate::dram::DeviceGeometry;
use crate::error::SimError;

/// Bytes moved per request (one BL8 burst on a x64 channel).
pub const LINE_BYTES: u64 = 64;

/// Order of the address fields, most significant first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MappingScheme {
    /// Row, bank, column: consecutive lines stay in one row.
    #[default]
    RoBaCo,
    /// Row, column, bank: consecutive lines interleave across banks.
    RoCoBa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub bank: usize,
    pub row: u32,
    pub column: u32,
}

/// Maps byte addresses to (bank, row, line-in-row) and back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressMapping {
    pub scheme: MappingScheme,
    banks: u64,
    rows: u64,
    lines: u64,
}

impl AddressMapping {
    pub fn new(scheme: MappingScheme, geometry: &DeviceGeometry) -> Self {
        AddressMapping {
            scheme,
            banks: geometry.total_banks() as u64,
            rows: geometry.rows_per_bank as u64,
            lines: (geometry.row_size_bytes as u64 / LINE_BYTES).max(1),
        }
    }

    pub fn lines_per_row(&self) -> u32 {
        self.lines as u32
    }

    pub fn encode(&self, loc: Location) -> u64 {
        let (b, r, c) = (loc.bank as u64, loc.row as u64, loc.column as u64);
        let line = match self.scheme {
            MappingScheme::RoBaCo => (r * self.banks + b) * self.lines + c,
            MappingScheme::RoCoBa => (r * self.lines + c) * self.banks + b,
        };
        line * LINE_BYTES
    }

    pub fn decode(&self, addr: u64) -> Result<Location, SimError> {
        let line = addr / LINE_BYTES;
        let (b, r, c) = match self.scheme {
            MappingScheme::RoBaCo => (line / self.lines % self.banks, line / self.lines / self.banks, line % self.lines),
            MappingScheme::RoCoBa => (line % self.banks, line / self.banks / self.lines, line / self.banks % self.lines),
        };
        if r >= self.rows {
            return Err(SimError::Trace(format!("address {addr:#x} beyond the device")));
        }
        Ok(Location { bank: b as usize, row: r as u32, column: c as u32 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub addr: u64,
    pub write: bool,
    /// Core cycles of computation before the request issues.
    pub gap: u32,
}

/// Which generator produced a trace, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceKind {
    /// `row_reuse`: chance the next request stays in the previous row;
    /// otherwise `hot_fraction` of requests go to a per-core set of
    /// `hot_rows` rows and the rest are uniform.
    Benign {
        #[serde(default = "default_reuse")]
        row_reuse: f64,
        #[serde(default = "default_hot_rows")]
        hot_rows: u32,
        #[serde(default = "default_hot_fraction")]
        hot_fraction: f64,
        #[serde(default = "default_write_ratio")]
        write_ratio: f64,
        #[serde(default = "default_gap")]
        gap: u32,
    },
    /// `hc` hammers of `victim`: 2 * hc requests alternating between its
    /// two neighbors.
    AttackDoublesided { bank: usize, victim: u32, hc: u32 },
    /// Round-robin over `rows` distinct rows spread across banks.
    HydraAdversarial { rows: u32 },
    /// One row hammered, alternated with never-repeating other rows.
    RrsAdversarial,
}

fn default_reuse() -> f64 {
    0.5
}
fn default_hot_rows() -> u32 {
    64
}
fn default_hot_fraction() -> f64 {
    0.5
}
fn default_write_ratio() -> f64 {
    0.25
}
fn default_gap() -> u32 {
    40
}

impl TraceKind {
    pub fn benign() -> Self {
        TraceKind::Benign {
            row_reuse: default_reuse(),
            hot_rows: default_hot_rows(),
            hot_fraction: default_hot_fraction(),
            write_ratio: default_write_ratio(),
            gap: default_gap(),
        }
    }

    /// Uniform rows, no reuse.
    pub fn uniform() -> Self {
        TraceKind::Benign { row_reuse: 0.0, hot_rows: 1, hot_fraction: 0.0, write_ratio: 0.0, gap: default_gap() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TraceKind::Benign { .. } => "benign",
            TraceKind::AttackDoublesided { .. } => "attack_doublesided",
            TraceKind::HydraAdversarial { .. } => "hydra_adversarial",
            TraceKind::RrsAdversarial => "rrs_adversarial",
        }
    }

    /// Outstanding requests the core keeps in flight.
    pub fn default_window(&self) -> usize {
        match self {
            TraceKind::Benign { .. } => 4,
            _ => 1,
        }
    }
}

/// A generated request stream for one core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreTrace {
    pub kind: TraceKind,
    pub window: usize,
    pub requests: Vec<Request>,
}

/// Generates `length` requests (attack traces use `2 * hc` instead).
/// Only rows below the reserved region are addressed.
pub fn gen_trace(
    kind: TraceKind,
    mapping: &AddressMapping,
    geometry: &DeviceGeometry,
    seed: u64,
    length: usize,
) -> Result<CoreTrace, SimError> {
    if length == 0 {
        return Err(SimError::Trace("length must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let banks = geometry.total_banks();
    let usable = usable_rows(geometry.rows_per_bank);
    let lines = mapping.lines_per_row();
    let at = |bank: usize, row: u32, column: u32| mapping.encode(Location { bank, row, column });
    let requests = match kind {
        TraceKind::Benign { row_reuse, hot_rows, hot_fraction, write_ratio, gap } => {
            let hot_rows = hot_rows.clamp(1, usable);
            let hot: Vec<(usize, u32)> = sample(&mut rng, banks * usable as usize, hot_rows as usize)
                .into_iter()
                .map(|i| (i % banks, (i / banks) as u32))
                .collect();
            let mut cur = (rng.random_range(0..banks), rng.random_range(0..usable));
            (0..length)
                .map(|i| {
                    if i > 0 && !rng.random_bool(row_reuse) {
                        cur = if rng.random_bool(hot_fraction) {
                            hot[rng.random_range(0..hot.len())]
                        } else {
                            (rng.random_range(0..banks), rng.random_range(0..usable))
                        };
                    }
                    Request { addr: at(cur.0, cur.1, rng.random_range(0..lines)), write: rng.random_bool(write_ratio), gap }
                })
                .collect()
        }
        TraceKind::AttackDoublesided { bank, victim, hc } => {
            if bank >= banks || victim == 0 || victim + 1 >= usable {
                return Err(SimError::Trace(format!("victim {victim} in bank {bank} needs two usable neighbors")));
            }
            (0..2 * hc as usize)
                .map(|i| {
                    let row = if i % 2 == 0 { victim + 1 } else { victim - 1 };
                    Request { addr: at(bank, row, 0), write: false, gap: 0 }
                })
                .collect()
        }
        TraceKind::HydraAdversarial { rows } => {
            let rows = rows.clamp(1, usable * banks as u32);
            let per_bank = rows.div_ceil(banks as u32);
            // spread each bank's rows evenly so every counter group is involved
            let stride = (usable / per_bank).max(1);
            let set: Vec<(usize, u32)> =
                (0..rows).map(|i| ((i as usize) % banks, ((i / banks as u32) * stride) % usable)).collect();
            (0..length)
                .map(|i| {
                    let (b, r) = set[i % set.len()];
                    Request { addr: at(b, r, 0), write: false, gap: 0 }
                })
                .collect()
        }
        TraceKind::RrsAdversarial => {
            let bank = rng.random_range(0..banks);
            let target = rng.random_range(0..usable);
            let mut other = target;
            (0..length)
                .map(|i| {
                    let row = if i % 2 == 0 {
                        target
                    } else {
                        // walk through the bank, skipping the target
                        other = (other + 1) % usable;
                        if other == target {
                            other = (other + 1) % usable;
                        }
                        other
                    };
                    Request { addr: at(bank, row, 0), write: false, gap: 0 }
                })
                .collect()
        }
    };
    Ok(CoreTrace { kind, window: kind.default_window(), requests })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geom() -> DeviceGeometry {
        DeviceGeometry::desk(4, 1024)
    }

    #[test]
    fn attack_alternates_neighbors() {
        let g = geom();
        let m = AddressMapping::new(MappingScheme::RoBaCo, &g);
        let t = gen_trace(TraceKind::AttackDoublesided { bank: 2, victim: 100, hc: 1024 }, &m, &g, 0, 1).unwrap();
        assert_eq!(t.requests.len(), 2048);
        assert_eq!(t.window, 1);
        let rows: Vec<u32> = t.requests.iter().take(4).map(|r| m.decode(r.addr).unwrap().row).collect();
        assert_eq!(rows, vec![101, 99, 101, 99]);
        assert!(t.requests.iter().all(|r| m.decode(r.addr).unwrap().bank == 2));
    }

    #[test]
    fn hydra_adversarial_cycles_distinct_rows() {
        let g = geom();
        let m = AddressMapping::new(MappingScheme::RoBaCo, &g);
        let t = gen_trace(TraceKind::HydraAdversarial { rows: 512 }, &m, &g, 0, 2048).unwrap();
        let distinct: std::collections::HashSet<u64> = t.requests.iter().map(|r| r.addr).collect();
        assert_eq!(distinct.len(), 512);
        assert_eq!(t.requests[0], t.requests[512]);
    }

    #[test]
    fn rrs_adversarial_hammers_one_row() {
        let g = geom();
        let m = AddressMapping::new(MappingScheme::RoBaCo, &g);
        let t = gen_trace(TraceKind::RrsAdversarial, &m, &g, 9, 1000).unwrap();
        let target = t.requests[0].addr;
        assert!(t.requests.iter().step_by(2).all(|r| r.addr == target));
        let others: std::collections::HashSet<u64> = t.requests.iter().skip(1).step_by(2).map(|r| r.addr).collect();
        assert_eq!(others.len(), 500);
    }

    #[test]
    fn uniform_benign_passes_chi_square() {
        let g = DeviceGeometry::desk(1, 64);
        let m = AddressMapping::new(MappingScheme::RoBaCo, &g);
        let usable = usable_rows(64) as usize;
        let n = 60_000;
        let t = gen_trace(TraceKind::uniform(), &m, &g, 4, n).unwrap();
        let mut counts = vec![0f64; usable];
        for r in &t.requests {
            counts[m.decode(r.addr).unwrap().row as usize] += 1.0;
        }
        let e = n as f64 / usable as f64;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        // 59 degrees of freedom; the 0.999 quantile is about 98
        assert!(chi2 < 98.0, "chi2 {chi2}");
    }

    #[test]
    fn rejects_edge_victim_and_empty_length() {
        let g = geom();
        let m = AddressMapping::new(MappingScheme::RoBaCo, &g);
        assert!(gen_trace(TraceKind::AttackDoublesided { bank: 0, victim: 0, hc: 4 }, &m, &g, 0, 1).is_err());
        assert!(gen_trace(TraceKind::benign(), &m, &g, 0, 0).is_err());
    }

    #[test]
    fn kind_json() {
        let k: TraceKind = serde_json::from_str(r#"{"kind":"benign","row_reuse":0.9}"#).unwrap();
        assert!(matches!(k, TraceKind::Benign { row_reuse, gap: 40, .. } if row_reuse == 0.9));
        let k: TraceKind = serde_json::from_str(r#"{"kind":"rrs_adversarial"}"#).unwrap();
        assert_eq!(k, TraceKind::RrsAdversarial);
    }

    proptest! {
        #[test]
        fn mapping_round_trips(bank in 0usize..4, row in 0u32..1024, column in 0u32..128, interleave in any::<bool>()) {
            let scheme = if interleave { MappingScheme::RoCoBa } else { MappingScheme::RoBaCo };
            let m = AddressMapping::new(scheme, &geom());
            let loc = Location { bank, row, column };
            prop_assert_eq!(m.decode(m.encode(loc)).unwrap(), loc);
        }

        #[test]
        fn benign_stays_in_usable_rows(seed in any::<u64>(), reuse in 0.0f64..1.0) {
            let g = geom();
            let m = AddressMapping::new(MappingScheme::RoBaCo, &g);
            let kind = TraceKind::Benign { row_reuse: reuse, hot_rows: 16, hot_fraction: 0.5, write_ratio: 0.3, gap: 5 };
            let t = gen_trace(kind, &m, &g, seed, 500).unwrap();
            for r in &t.requests {
                prop_assert!(m.decode(r.addr).unwrap().row < usable_rows(1024));
            }
        }
    }
}
