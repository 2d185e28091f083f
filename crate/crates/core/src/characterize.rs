//! Hammer-test harness: double-sided hammering, BER measurement, worst-case
//! data pattern search, HC_first discovery and the full per-row sweep.
//!
//! Measurements apply the hammer exposure to the disturbance oracle in bulk
//! rather than replaying every command; [`hammer_doublesided`] replays the
//! exact command stream and produces the same oracle state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dram::{Command, Device, Event};
use crate::error::{CharacterizeError, IoError};
use crate::oracle::{DataPattern, DisturbanceState};
use crate::profile::{Bucket, HcFirst, VulnerabilityProfile, HAMMER_GRID, WCDP_HAMMERS};

/// Fraction of the 128K BER reached right at HC_first.
pub const BER_JUMP: f64 = 0.25;
/// BER multiplier for patterns other than the row's worst case.
pub const NON_WCDP_FACTOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HammerTestConfig {
    pub taggon_values: Vec<Bucket>,
    pub banks_under_test: Vec<usize>,
    /// Ascending sweep grid; 128K is covered by the pattern search.
    pub hammer_grid: Vec<u32>,
    pub iterations: u32,
}

impl Default for HammerTestConfig {
    fn default() -> Self {
        HammerTestConfig {
            taggon_values: Bucket::ALL.to_vec(),
            banks_under_test: vec![0],
            hammer_grid: HAMMER_GRID[..13].to_vec(),
            iterations: 10,
        }
    }
}

impl HammerTestConfig {
    pub fn validate(&self) -> Result<(), crate::error::ConfigError> {
        use crate::error::ConfigError;
        if self.iterations == 0 {
            return Err(ConfigError::Parameter("iterations must be >= 1".into()));
        }
        if self.hammer_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::Parameter("hammer grid must be strictly ascending".into()));
        }
        Ok(())
    }
}

/// A device under test together with its ground-truth disturbance state.
#[derive(Debug, Clone)]
pub struct Tester {
    pub device: Device,
    pub state: DisturbanceState,
    cycle: u64,
    overlong: u64,
}

impl Tester {
    pub fn new(device: Device) -> Self {
        let g = *device.geometry();
        let mut state = DisturbanceState::new(g.total_banks(), g.rows_per_bank)
            .with_clock_period(device.timing().clock_period);
        if let Some(layout) = device.subarrays() {
            state = state.with_subarray_coupling(layout.clone());
        }
        Tester { device, state, cycle: 0, overlong: 0 }
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    /// Measurements whose hammering outlasted one refresh window.
    pub fn overlong_measurements(&self) -> u64 {
        self.overlong
    }

    fn check_victim(&self, bank: usize, victim: u32) -> Result<(), CharacterizeError> {
        let g = self.device.geometry();
        if bank >= g.total_banks() || victim >= g.rows_per_bank {
            return Err(crate::error::DramError::AddressOutOfRange { bank, row: victim }.into());
        }
        if victim == 0 || victim + 1 >= g.rows_per_bank {
            return Err(CharacterizeError::EdgeVictim { bank, row: victim });
        }
        Ok(())
    }

    fn on_cycles(&self, taggon: Bucket) -> u64 {
        let c = self.device.cycles();
        self.device.timing().cycles(taggon.ns()).max(c.ras)
    }

    /// Writes the pattern into the victim and both aggressors, which also
    /// restores their charge.
    fn initialize(&mut self, bank: usize, victim: u32) {
        for r in [victim - 1, victim, victim + 1] {
            self.state.refresh_row(bank, r, self.cycle);
        }
    }

    /// Simulated duration of `hc` double-sided iterations.
    fn duration(&self, hc: u32, taggon: Bucket) -> u64 {
        2 * hc as u64 * (self.on_cycles(taggon) + self.device.cycles().rp)
    }

    fn expose_bulk(&mut self, bank: usize, victim: u32, hc: u32, taggon: Bucket) {
        let ns = self.device.timing().ns(self.on_cycles(taggon));
        self.state.record_activations(bank, victim + 1, hc, ns);
        self.state.record_activations(bank, victim - 1, hc, ns);
        let d = self.duration(hc, taggon);
        if d > self.device.cycles().refw {
            self.overlong += 1;
        }
        self.cycle += d;
    }
}

/// Issues `hc` rounds of ACT(victim+1), PRE, ACT(victim-1), PRE with the
/// aggressor held open for `taggon`, feeding every activation to the oracle.
/// Returns the executed commands.
pub fn hammer_doublesided(
    t: &mut Tester,
    bank: usize,
    victim: u32,
    hc: u32,
    taggon: Bucket,
) -> Result<Vec<Command>, CharacterizeError> {
    t.check_victim(bank, victim)?;
    let on = t.on_cycles(taggon);
    let rp = t.device.cycles().rp;
    let mut cmds = Vec::with_capacity(4 * hc as usize);
    for _ in 0..hc {
        for aggr in [victim + 1, victim - 1] {
            let act = Command::act(bank, aggr, t.cycle);
            let pre = Command::pre(bank, t.cycle + on);
            t.device.issue_command(act)?;
            if let Some(Event::AggressorOnTime { row, ns, .. }) = t.device.issue_command(pre)? {
                t.state.record_activation(bank, row, ns);
            }
            cmds.push(act);
            cmds.push(pre);
            t.cycle += on + rp;
        }
    }
    Ok(cmds)
}

/// Modeled BER once `hc` reaches the row's HC_first.
pub fn ber_curve(ber_at_128k: f64, hcfirst: HcFirst, hc: u32) -> f64 {
    let Some(first) = hcfirst.get() else { return 0.0 };
    if hc < first {
        return 0.0;
    }
    let ramp = if hc >= WCDP_HAMMERS || first >= WCDP_HAMMERS {
        1.0
    } else {
        (hc - first) as f64 / (WCDP_HAMMERS - first) as f64
    };
    ber_at_128k * (ramp * (1.0 - BER_JUMP) + BER_JUMP).min(1.0)
}

/// Initializes victim and aggressors with `pattern`, hammers `hc` times and
/// reads back the victim's bit error rate.
pub fn measure_ber(
    t: &mut Tester,
    profile: &VulnerabilityProfile,
    bank: usize,
    victim: u32,
    pattern: DataPattern,
    hc: u32,
    taggon: Bucket,
) -> Result<f64, CharacterizeError> {
    t.check_victim(bank, victim)?;
    t.initialize(bank, victim);
    t.expose_bulk(bank, victim, hc, taggon);
    if !t.state.check_flip(profile, bank, victim) {
        return Ok(0.0);
    }
    let row = profile.row(bank, victim);
    let bucket = t.state.victim(bank, victim).bucket.unwrap_or(taggon);
    let factor = if pattern == row.wcdp { 1.0 } else { NON_WCDP_FACTOR };
    Ok(ber_curve(row.ber_at_128k, row.hcfirst(bucket), hc) * factor)
}

/// Pattern with the largest BER at 128K hammers; ties go to table order.
pub fn find_wcdp(
    t: &mut Tester,
    profile: &VulnerabilityProfile,
    bank: usize,
    victim: u32,
    taggon: Bucket,
) -> Result<(DataPattern, f64), CharacterizeError> {
    let mut best = (DataPattern::ALL[0], f64::NEG_INFINITY);
    for p in DataPattern::ALL {
        let ber = measure_ber(t, profile, bank, victim, p, WCDP_HAMMERS, taggon)?;
        if ber > best.1 {
            best = (p, ber);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HcFirstSearch {
    pub hcfirst: HcFirst,
    /// Grid measurements taken by the sweeps.
    pub measurements: u32,
}

/// Ascending sweep over `grid` with `pattern`, repeated `iterations` times;
/// keeps the smallest hammer count that produced a bitflip. `ber_at_max` is
/// the BER already measured at 128K and covers the grid's top end.
pub fn sweep_hcfirst(
    t: &mut Tester,
    profile: &VulnerabilityProfile,
    bank: usize,
    victim: u32,
    taggon: Bucket,
    pattern: DataPattern,
    grid: &[u32],
    iterations: u32,
    ber_at_max: f64,
) -> Result<HcFirstSearch, CharacterizeError> {
    let mut found = HcFirst::NONE;
    let mut measurements = 0;
    for _ in 0..iterations.max(1) {
        let mut this = None;
        for &hc in grid {
            measurements += 1;
            if measure_ber(t, profile, bank, victim, pattern, hc, taggon)? > 0.0 {
                this = Some(HcFirst::new(hc));
                break;
            }
        }
        let this = this.unwrap_or(if ber_at_max > 0.0 { HcFirst::new(WCDP_HAMMERS) } else { HcFirst::NONE });
        found = found.min(this);
    }
    Ok(HcFirstSearch { hcfirst: found, measurements })
}

/// Finds the worst-case pattern, then sweeps the default 13-point grid once.
pub fn find_hcfirst(
    t: &mut Tester,
    profile: &VulnerabilityProfile,
    bank: usize,
    victim: u32,
    taggon: Bucket,
) -> Result<HcFirstSearch, CharacterizeError> {
    let (wcdp, ber) = find_wcdp(t, profile, bank, victim, taggon)?;
    sweep_hcfirst(t, profile, bank, victim, taggon, wcdp, &HAMMER_GRID[..13], 1, ber)
}

/// Characterization result for one victim row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowRecord {
    pub bank: usize,
    pub row: u32,
    /// HC_first per bucket; `None` for buckets not tested.
    pub hcfirst: [Option<HcFirst>; 3],
    /// Worst-case pattern found at the first tested bucket.
    pub wcdp: DataPattern,
    /// BER at 128K with the worst-case pattern, first tested bucket.
    pub ber_at_128k: f64,
    /// (bucket, hc, ber) over the sweep grid.
    pub ber_curve: Vec<(Bucket, u32, f64)>,
    /// Some measurement of this row ran longer than a refresh window.
    pub overlong: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<RowRecord>,
}

/// Characterizes the listed victims. Output is sorted by (bank, row), so it
/// does not depend on the order of `victims`.
pub fn test_loop_victims(
    t: &mut Tester,
    profile: &VulnerabilityProfile,
    config: &HammerTestConfig,
    victims: &[(usize, u32)],
) -> Result<Dataset, CharacterizeError> {
    let mut records: Vec<RowRecord> = victims
        .iter()
        .map(|&(bank, row)| RowRecord {
            bank,
            row,
            hcfirst: [None; 3],
            wcdp: DataPattern::ALL[0],
            ber_at_128k: 0.0,
            ber_curve: Vec::new(),
            overlong: false,
        })
        .collect();
    for (i, &bucket) in config.taggon_values.iter().enumerate() {
        for rec in &mut records {
            let before = t.overlong_measurements();
            let (wcdp, ber) = find_wcdp(t, profile, rec.bank, rec.row, bucket)?;
            let mut worst_ber = ber;
            for &hc in &config.hammer_grid {
                let mut b: f64 = 0.0;
                for _ in 0..config.iterations {
                    b = b.max(measure_ber(t, profile, rec.bank, rec.row, wcdp, hc, bucket)?);
                }
                rec.ber_curve.push((bucket, hc, b));
                worst_ber = worst_ber.max(b);
            }
            let s = sweep_hcfirst(t, profile, rec.bank, rec.row, bucket, wcdp, &config.hammer_grid, config.iterations, ber)?;
            rec.hcfirst[bucket.index()] = Some(s.hcfirst);
            if i == 0 {
                rec.wcdp = wcdp;
                rec.ber_at_128k = worst_ber;
            }
            rec.overlong |= t.overlong_measurements() > before;
        }
    }
    records.sort_by_key(|r| (r.bank, r.row));
    Ok(Dataset { records })
}

/// Algorithm 1's outer loop: every interior row of every bank under test.
pub fn test_loop(
    t: &mut Tester,
    profile: &VulnerabilityProfile,
    config: &HammerTestConfig,
) -> Result<Dataset, CharacterizeError> {
    config.validate()?;
    let rpb = t.device.geometry().rows_per_bank;
    let victims: Vec<(usize, u32)> = config
        .banks_under_test
        .iter()
        .flat_map(|&b| (1..rpb.saturating_sub(1)).map(move |r| (b, r)))
        .collect();
    test_loop_victims(t, profile, config, &victims)
}

#[derive(Serialize, Deserialize)]
struct DatasetRow {
    bank: usize,
    row: u32,
    hcfirst_36ns: Option<HcFirst>,
    hcfirst_500ns: Option<HcFirst>,
    hcfirst_2us: Option<HcFirst>,
    ber: f64,
    wcdp: DataPattern,
    bin: u8,
}

impl Dataset {
    /// Profile-schema CSV of the characterized rows (untested buckets empty).
    pub fn write_csv(&self, path: &Path) -> Result<(), IoError> {
        let file = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for r in &self.records {
            w.serialize(DatasetRow {
                bank: r.bank,
                row: r.row,
                hcfirst_36ns: r.hcfirst[0],
                hcfirst_500ns: r.hcfirst[1],
                hcfirst_2us: r.hcfirst[2],
                ber: r.ber_at_128k,
                wcdp: r.wcdp,
                bin: 0,
            })?;
        }
        w.flush().map_err(|e| IoError::io(path, e))
    }

    /// Sidecar with the BER curves: bank, row, bucket, hc, ber.
    pub fn write_ber_curves(&self, path: &Path) -> Result<(), IoError> {
        let file = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["bank", "row", "bucket", "hc", "ber"])?;
        for r in &self.records {
            for (b, hc, ber) in &r.ber_curve {
                w.write_record([r.bank.to_string(), r.row.to_string(), b.label().into(), hc.to_string(), ber.to_string()])?;
            }
        }
        w.flush().map_err(|e| IoError::io(path, e))
    }
}
