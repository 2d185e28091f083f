//! DRAM geometry, timing, and a command-level device model.
//!
//! The device tracks per-bank open rows and the cycle of the last command of
//! each kind, rejects commands that violate the timing parameters, and emits
//! the events the rest of the simulator consumes: row activations, aggressor
//! on-times at precharge, and the row stride covered by each refresh.

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, DramError};

/// Clock cycles spent transferring one BL8 burst.
pub const BURST_CYCLES: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceGeometry {
    pub channels: u32,
    pub ranks_per_channel: u32,
    pub bank_groups: u32,
    pub banks_per_group: u32,
    pub rows_per_bank: u32,
    pub columns_per_row: u32,
    pub row_size_bytes: u32,
}

impl Default for DeviceGeometry {
    /// DDR4, one channel and rank, 4 bank groups x 4 banks, 128K rows of 8 KiB.
    fn default() -> Self {
        DeviceGeometry {
            channels: 1,
            ranks_per_channel: 1,
            bank_groups: 4,
            banks_per_group: 4,
            rows_per_bank: 128 * 1024,
            columns_per_row: 1024,
            row_size_bytes: 8192,
        }
    }
}

impl DeviceGeometry {
    /// Desk-scale geometry: `banks` banks in a single bank group.
    pub fn desk(banks: u32, rows_per_bank: u32) -> Self {
        DeviceGeometry {
            bank_groups: 1,
            banks_per_group: banks,
            rows_per_bank,
            ..Default::default()
        }
    }

    pub fn with_rows_per_bank(mut self, rows: u32) -> Self {
        self.rows_per_bank = rows;
        self
    }

    pub fn total_banks(&self) -> usize {
        (self.channels * self.ranks_per_channel * self.bank_groups * self.banks_per_group) as usize
    }

    pub fn total_rows(&self) -> usize {
        self.total_banks() * self.rows_per_bank as usize
    }

    /// Number of row-address bits.
    pub fn row_bits(&self) -> u32 {
        self.rows_per_bank.trailing_zeros()
    }

    pub fn bank_bits(&self) -> u32 {
        let banks = self.total_banks() as u32;
        32 - (banks.max(1) - 1).leading_zeros()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let counts = [
            ("channels", self.channels),
            ("ranks_per_channel", self.ranks_per_channel),
            ("bank_groups", self.bank_groups),
            ("banks_per_group", self.banks_per_group),
            ("rows_per_bank", self.rows_per_bank),
            ("columns_per_row", self.columns_per_row),
            ("row_size_bytes", self.row_size_bytes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ConfigError::Geometry(format!("{name} must be >= 1")));
            }
        }
        if !self.rows_per_bank.is_power_of_two() {
            return Err(ConfigError::Geometry(format!(
                "rows_per_bank must be a power of two, got {}",
                self.rows_per_bank
            )));
        }
        Ok(())
    }
}

/// DDR4 timing parameters in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct TimingParams {
    pub clock_period: f64,
    pub tRCD: f64,
    pub tRAS: f64,
    pub tRP: f64,
    pub tCL: f64,
    pub tCWL: f64,
    pub tRFC: f64,
    pub tREFI: f64,
    pub tREFW: f64,
}

impl Default for TimingParams {
    /// DDR4-2666 (0.75 ns clock); tREFW covers 8192 REF commands.
    fn default() -> Self {
        TimingParams {
            clock_period: 0.75,
            tRCD: 13.5,
            tRAS: 36.0,
            tRP: 13.5,
            tCL: 13.5,
            tCWL: 10.5,
            tRFC: 350.0,
            tREFI: 7800.0,
            tREFW: 7800.0 * 8192.0,
        }
    }
}

impl TimingParams {
    /// Converts nanoseconds to whole clock cycles, rounding up.
    pub fn cycles(&self, ns: f64) -> u64 {
        let c = ns / self.clock_period;
        // tolerate float noise such as 36.0 / 0.75 = 47.99999
        let r = c.round();
        if (c - r).abs() < 1e-6 {
            r as u64
        } else {
            c.ceil() as u64
        }
    }

    pub fn ns(&self, cycles: u64) -> f64 {
        cycles as f64 * self.clock_period
    }

    /// REF commands per refresh window.
    pub fn refs_per_window(&self) -> u64 {
        (self.tREFW / self.tREFI).round() as u64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let all = [
            ("clock_period", self.clock_period),
            ("tRCD", self.tRCD),
            ("tRAS", self.tRAS),
            ("tRP", self.tRP),
            ("tCL", self.tCL),
            ("tCWL", self.tCWL),
            ("tRFC", self.tRFC),
            ("tREFI", self.tREFI),
            ("tREFW", self.tREFW),
        ];
        for (name, v) in all {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ConfigError::Timing(format!("{name} must be positive")));
            }
        }
        if self.tRAS < self.tRCD {
            return Err(ConfigError::Timing("tRAS must be >= tRCD".into()));
        }
        let ratio = self.tREFW / self.tREFI;
        if (ratio - ratio.round()).abs() > 1e-6 || ratio < 1.0 {
            return Err(ConfigError::Timing(
                "tREFW must be an integer multiple of tREFI".into(),
            ));
        }
        Ok(())
    }

    pub fn in_cycles(&self) -> TimingCycles {
        TimingCycles {
            rcd: self.cycles(self.tRCD),
            ras: self.cycles(self.tRAS),
            rp: self.cycles(self.tRP),
            cl: self.cycles(self.tCL),
            cwl: self.cycles(self.tCWL),
            rfc: self.cycles(self.tRFC),
            refi: self.cycles(self.tREFI),
            refw: self.cycles(self.tREFI) * self.refs_per_window(),
            ccd: BURST_CYCLES,
        }
    }
}

/// Timing parameters converted to clock cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingCycles {
    pub rcd: u64,
    pub ras: u64,
    pub rp: u64,
    pub cl: u64,
    pub cwl: u64,
    pub rfc: u64,
    pub refi: u64,
    pub refw: u64,
    pub ccd: u64,
}

/// Geometry and timing as loaded from a JSON config.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceConfig {
    pub geometry: DeviceGeometry,
    pub timing: TimingParams,
}

impl DeviceConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommandKind {
    Act,
    Pre,
    Rd,
    Wr,
    Ref,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Command {
    pub kind: CommandKind,
    pub bank: usize,
    pub row: Option<u32>,
    pub cycle: u64,
}

impl Command {
    pub fn act(bank: usize, row: u32, cycle: u64) -> Self {
        Command { kind: CommandKind::Act, bank, row: Some(row), cycle }
    }
    pub fn pre(bank: usize, cycle: u64) -> Self {
        Command { kind: CommandKind::Pre, bank, row: None, cycle }
    }
    pub fn rd(bank: usize, cycle: u64) -> Self {
        Command { kind: CommandKind::Rd, bank, row: None, cycle }
    }
    pub fn wr(bank: usize, cycle: u64) -> Self {
        Command { kind: CommandKind::Wr, bank, row: None, cycle }
    }
    pub fn refresh(cycle: u64) -> Self {
        Command { kind: CommandKind::Ref, bank: 0, row: None, cycle }
    }
}

/// Contiguous (wrapping) stride of rows refreshed by one REF in every bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefreshStride {
    pub first: u32,
    pub count: u32,
    pub rows_per_bank: u32,
}

impl RefreshStride {
    pub fn rows(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.count).map(move |i| (self.first + i) % self.rows_per_bank)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    Activation { bank: usize, row: u32, cycle: u64 },
    AggressorOnTime { bank: usize, row: u32, cycles: u64, ns: f64 },
    Refreshed(RefreshStride),
}

#[derive(Debug, Clone, Default)]
pub struct BankState {
    pub open_row: Option<u32>,
    pub activation_cycle: Option<u64>,
    last_pre: Option<u64>,
    last_col: Option<u64>,
    /// Activations per row in the current refresh window.
    pub row_activations: Vec<u32>,
}

/// Command totals kept by the device.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceCounters {
    pub acts: u64,
    pub pres: u64,
    pub reads: u64,
    pub writes: u64,
    pub refs: u64,
    /// Row activations performed internally by REF commands (rows x banks).
    pub refresh_row_activations: u64,
}

/// Subarray partition of a bank: the start row of each subarray.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubarrayLayout {
    pub rows: u32,
    pub starts: Vec<u32>,
}

impl SubarrayLayout {
    pub fn single(rows: u32) -> Self {
        SubarrayLayout { rows, starts: vec![0] }
    }

    pub fn uniform(rows: u32, size: u32) -> Self {
        SubarrayLayout { rows, starts: (0..rows).step_by(size as usize).collect() }
    }

    pub fn from_sizes(sizes: &[u32]) -> Self {
        let mut starts = Vec::with_capacity(sizes.len());
        let mut at = 0;
        for &s in sizes {
            starts.push(at);
            at += s;
        }
        SubarrayLayout { rows: at, starts }
    }

    /// Random sizes in `[min, max]` summing to `rows`. Needs `rows >= min`
    /// and `max >= 2 * min - 1` so the last piece always fits.
    pub fn random<R: rand::Rng>(rows: u32, min: u32, max: u32, rng: &mut R) -> Self {
        assert!(min >= 1 && rows >= min && max + 1 >= 2 * min, "size range cannot tile {rows} rows");
        let mut sizes = Vec::new();
        let mut left = rows;
        while left > max {
            let s = rng.random_range(min..=max.min(left - min));
            sizes.push(s);
            left -= s;
        }
        sizes.push(left);
        Self::from_sizes(&sizes)
    }

    /// Interior boundaries: rows that begin a subarray, excluding row 0.
    pub fn boundaries(&self) -> &[u32] {
        &self.starts[1.min(self.starts.len())..]
    }

    pub fn subarray_of(&self, row: u32) -> usize {
        match self.starts.binary_search(&row) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    pub fn sizes(&self) -> Vec<u32> {
        let mut out: Vec<u32> = self.starts.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(&last) = self.starts.last() {
            out.push(self.rows - last);
        }
        out
    }

    pub fn same_subarray(&self, a: u32, b: u32) -> bool {
        self.subarray_of(a) == self.subarray_of(b)
    }
}

/// Command-level DRAM device.
#[derive(Debug, Clone)]
pub struct Device {
    geometry: DeviceGeometry,
    timing: TimingParams,
    cyc: TimingCycles,
    banks: Vec<BankState>,
    refresh_cursor: u32,
    rows_per_ref: u32,
    ref_busy_until: u64,
    window_start: u64,
    subarrays: Option<SubarrayLayout>,
    counters: DeviceCounters,
}

impl Device {
    pub fn new(geometry: DeviceGeometry, timing: TimingParams) -> Result<Self, ConfigError> {
        geometry.validate()?;
        timing.validate()?;
        let refs = timing.refs_per_window();
        let rows_per_ref = (geometry.rows_per_bank as u64).div_ceil(refs).max(1) as u32;
        let banks = (0..geometry.total_banks())
            .map(|_| BankState {
                row_activations: vec![0; geometry.rows_per_bank as usize],
                ..Default::default()
            })
            .collect();
        Ok(Device {
            geometry,
            timing,
            cyc: timing.in_cycles(),
            banks,
            refresh_cursor: 0,
            rows_per_ref,
            ref_busy_until: 0,
            window_start: 0,
            subarrays: None,
            counters: DeviceCounters::default(),
        })
    }

    /// Attaches a hidden subarray layout, used by RowClone experiments.
    pub fn with_subarrays(mut self, layout: SubarrayLayout) -> Self {
        self.subarrays = Some(layout);
        self
    }

    pub fn geometry(&self) -> &DeviceGeometry {
        &self.geometry
    }
    pub fn timing(&self) -> &TimingParams {
        &self.timing
    }
    pub fn cycles(&self) -> &TimingCycles {
        &self.cyc
    }
    pub fn bank(&self, bank: usize) -> &BankState {
        &self.banks[bank]
    }
    pub fn counters(&self) -> DeviceCounters {
        self.counters
    }
    pub fn rows_per_refresh(&self) -> u32 {
        self.rows_per_ref
    }
    pub fn subarrays(&self) -> Option<&SubarrayLayout> {
        self.subarrays.as_ref()
    }

    /// Earliest cycle at which `kind` may legally issue to `bank`.
    pub fn earliest(&self, kind: CommandKind, bank: usize) -> u64 {
        let b = &self.banks[bank];
        match kind {
            CommandKind::Act => {
                let pre = b.last_pre.map_or(0, |p| p + self.cyc.rp);
                pre.max(self.ref_busy_until)
            }
            CommandKind::Rd | CommandKind::Wr => {
                let act = b.activation_cycle.map_or(0, |a| a + self.cyc.rcd);
                act.max(b.last_col.map_or(0, |c| c + self.cyc.ccd))
            }
            CommandKind::Pre => {
                let act = b.activation_cycle.map_or(0, |a| a + self.cyc.ras);
                act.max(b.last_col.unwrap_or(0))
            }
            CommandKind::Ref => self
                .banks
                .iter()
                .map(|b| b.last_pre.map_or(0, |p| p + self.cyc.rp))
                .max()
                .unwrap_or(0)
                .max(self.ref_busy_until),
        }
    }

    fn check(&self, param: &'static str, earliest: u64, cycle: u64) -> Result<(), DramError> {
        if cycle < earliest {
            Err(DramError::TimingViolation { param, earliest, cycle })
        } else {
            Ok(())
        }
    }

    /// Applies one command; returns the event it produced, if any.
    pub fn issue_command(&mut self, cmd: Command) -> Result<Option<Event>, DramError> {
        if cmd.kind != CommandKind::Ref && cmd.bank >= self.banks.len() {
            return Err(DramError::AddressOutOfRange { bank: cmd.bank, row: cmd.row.unwrap_or(0) });
        }
        match cmd.kind {
            CommandKind::Act => {
                let row = cmd.row.ok_or_else(|| DramError::ProtocolError("ACT without row".into()))?;
                if row >= self.geometry.rows_per_bank {
                    return Err(DramError::AddressOutOfRange { bank: cmd.bank, row });
                }
                let b = &self.banks[cmd.bank];
                if let Some(open) = b.open_row {
                    return Err(DramError::ProtocolError(format!(
                        "ACT row {row} on bank {} with row {open} open",
                        cmd.bank
                    )));
                }
                if let Some(p) = b.last_pre {
                    self.check("tRP", p + self.cyc.rp, cmd.cycle)?;
                }
                self.check("tRFC", self.ref_busy_until, cmd.cycle)?;
                let b = &mut self.banks[cmd.bank];
                b.open_row = Some(row);
                b.activation_cycle = Some(cmd.cycle);
                b.last_col = None;
                b.row_activations[row as usize] += 1;
                self.counters.acts += 1;
                Ok(Some(Event::Activation { bank: cmd.bank, row, cycle: cmd.cycle }))
            }
            CommandKind::Rd | CommandKind::Wr => {
                if cmd.row.is_some() {
                    return Err(DramError::ProtocolError("column command carries a row".into()));
                }
                let b = &self.banks[cmd.bank];
                let Some(act) = b.activation_cycle else {
                    return Err(DramError::ProtocolError(format!(
                        "{:?} on closed bank {}",
                        cmd.kind, cmd.bank
                    )));
                };
                self.check("tRCD", act + self.cyc.rcd, cmd.cycle)?;
                if let Some(c) = b.last_col {
                    self.check("tCCD", c + self.cyc.ccd, cmd.cycle)?;
                }
                self.banks[cmd.bank].last_col = Some(cmd.cycle);
                if cmd.kind == CommandKind::Rd {
                    self.counters.reads += 1;
                } else {
                    self.counters.writes += 1;
                }
                Ok(None)
            }
            CommandKind::Pre => {
                if cmd.row.is_some() {
                    return Err(DramError::ProtocolError("PRE carries a row".into()));
                }
                let b = &self.banks[cmd.bank];
                let (Some(row), Some(act)) = (b.open_row, b.activation_cycle) else {
                    return Err(DramError::ProtocolError(format!("PRE on closed bank {}", cmd.bank)));
                };
                self.check("tRAS", act + self.cyc.ras, cmd.cycle)?;
                if let Some(c) = b.last_col {
                    self.check("column", c, cmd.cycle)?;
                }
                let b = &mut self.banks[cmd.bank];
                b.open_row = None;
                b.activation_cycle = None;
                b.last_pre = Some(cmd.cycle);
                self.counters.pres += 1;
                let cycles = cmd.cycle - act;
                Ok(Some(Event::AggressorOnTime {
                    bank: cmd.bank,
                    row,
                    cycles,
                    ns: self.timing.ns(cycles),
                }))
            }
            CommandKind::Ref => {
                if cmd.row.is_some() {
                    return Err(DramError::ProtocolError("REF carries a row".into()));
                }
                if let Some((i, _)) = self.banks.iter().enumerate().find(|(_, b)| b.open_row.is_some()) {
                    return Err(DramError::ProtocolError(format!("REF with bank {i} open")));
                }
                self.check("tRP", self.earliest(CommandKind::Ref, 0).max(self.ref_busy_until), cmd.cycle)?;
                self.ref_busy_until = cmd.cycle + self.cyc.rfc;
                if cmd.cycle >= self.window_start + self.cyc.refw {
                    self.window_start = cmd.cycle - (cmd.cycle - self.window_start) % self.cyc.refw;
                    for b in &mut self.banks {
                        b.row_activations.iter_mut().for_each(|c| *c = 0);
                    }
                }
                let rows = self.geometry.rows_per_bank;
                let stride = RefreshStride {
                    first: self.refresh_cursor,
                    count: self.rows_per_ref.min(rows),
                    rows_per_bank: rows,
                };
                self.refresh_cursor = (self.refresh_cursor + stride.count) % rows;
                self.counters.refs += 1;
                self.counters.refresh_row_activations += stride.count as u64 * self.banks.len() as u64;
                Ok(Some(Event::Refreshed(stride)))
            }
        }
    }

    /// Issues an all-bank REF at `cycle` and returns the refreshed stride.
    ///
    /// Banks must be precharged; callers schedule ticks on tREFI boundaries.
    pub fn refresh_tick(&mut self, cycle: u64) -> Result<RefreshStride, DramError> {
        match self.issue_command(Command::refresh(cycle))? {
            Some(Event::Refreshed(s)) => Ok(s),
            _ => unreachable!("REF always reports its stride"),
        }
    }

    /// Cycle until which a REF keeps all banks busy.
    pub fn refresh_busy_until(&self) -> u64 {
        self.ref_busy_until
    }

    /// Attempts an in-DRAM row copy. Succeeds with probability `reliability`
    /// when both rows share a subarray; never succeeds across subarrays.
    pub fn row_clone<R: rand::Rng>(&self, src: u32, dst: u32, reliability: f64, rng: &mut R) -> bool {
        let same = self.subarrays.as_ref().map_or(true, |l| l.same_subarray(src, dst));
        let draw: f64 = rng.random();
        same && draw < reliability
    }
}
