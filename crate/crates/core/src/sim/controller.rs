//! Event-driven FR-FCFS memory controller with an open-row policy.
//!
//! Banks are scheduled independently (there is no command-bus model). Each
//! bank keeps a cursor, the earliest cycle its next command may issue; the
//! device model is the authority on timing legality. Preventive work from a
//! defense queues on its bank and runs right after the open row closes,
//! before the next demand activation there.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::trace::{AddressMapping, CoreTrace, MappingScheme};
use crate::defenses::{act_hold_cycles, metadata_cycles, DefenseAction, DefenseStats, ImpliedAct};
use crate::dram::{Command, CommandKind, Device, DeviceCounters, Event, TimingCycles, BURST_CYCLES};
use crate::error::{DramError, SimError};
use crate::oracle::{DisturbanceState, FlipRecord};
use crate::profile::VulnerabilityProfile;
use crate::svard::{Adapted, SvardCounters};

/// Preventive work items a single row closure may run before the
/// controller gives up on a runaway cascade.
const WORK_LIMIT: usize = 1 << 20;

fn default_depth() -> usize {
    64
}
fn default_cap() -> u32 {
    16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// Entries in each of the read and write queues.
    #[serde(default = "default_depth")]
    pub queue_depth: usize,
    /// Row hits served back to back before older misses take priority.
    #[serde(default = "default_cap")]
    pub column_cap: u32,
    #[serde(default)]
    pub mapping: MappingScheme,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig { queue_depth: default_depth(), column_cap: default_cap(), mapping: MappingScheme::default() }
    }
}

/// Activation and busy-time accounting, kept by the controller.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub demand_acts: u64,
    pub preventive_acts: u64,
    /// Counter transfers executed, one metadata-row activation each.
    pub metadata_acts: u64,
    /// Rows refreshed by periodic REF, summed over banks.
    pub refresh_row_acts: u64,
    pub preventive_cycles: u64,
    pub metadata_cycles: u64,
    pub throttle_stall_cycles: u64,
    pub throttled_requests: u64,
    pub row_hits: u64,
    /// Preventive work abandoned after a runaway cascade.
    pub dropped_work: u64,
}

#[derive(Debug, Clone, Copy)]
enum Work {
    Act(ImpliedAct),
    Transfer,
}

#[derive(Debug, Default)]
struct BankCtl {
    open: Option<u32>,
    hits: u32,
    cursor: u64,
    work: VecDeque<Work>,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    core: usize,
    seq: u64,
    bank: usize,
    row: u32,
    write: bool,
    release: u64,
}

#[derive(Debug, Default, Clone, Copy)]
struct CoreState {
    next: usize,
    outstanding: usize,
    last_issue: u64,
    completed: usize,
    finish: u64,
}

pub(crate) struct Outcome {
    pub finish: Vec<u64>,
    pub completed: bool,
    pub cycles: u64,
    pub tally: Tally,
    pub device: DeviceCounters,
    pub flips: Vec<FlipRecord>,
    pub defense: Option<DefenseStats>,
    pub svard: SvardCounters,
}

pub(crate) struct Engine<'a> {
    device: Device,
    oracle: DisturbanceState,
    profile: &'a VulnerabilityProfile,
    defense: Option<Adapted>,
    mapping: AddressMapping,
    cfg: ControllerConfig,
    t: TimingCycles,
    columns: u32,
    banks: Vec<BankCtl>,
    queue: Vec<Pending>,
    reads: usize,
    writes: usize,
    traces: &'a [CoreTrace],
    cores: Vec<CoreState>,
    completions: BinaryHeap<Reverse<(u64, usize)>>,
    throttled: HashMap<(usize, u32), u64>,
    actions: Vec<DefenseAction>,
    tally: Tally,
    next_ref: u64,
    refs: u64,
    refs_per_epoch: u64,
    seq: u64,
}

impl<'a> Engine<'a> {
    pub fn new(
        device: Device,
        profile: &'a VulnerabilityProfile,
        defense: Option<Adapted>,
        cfg: ControllerConfig,
        traces: &'a [CoreTrace],
    ) -> Self {
        let t = *device.cycles();
        let geometry = *device.geometry();
        let refs_per_window = device.timing().refs_per_window();
        let epochs = defense.as_ref().map_or(1, |d| d.defense.epochs_per_window()).max(1);
        Engine {
            oracle: DisturbanceState::for_profile(profile).with_clock_period(device.timing().clock_period),
            mapping: AddressMapping::new(cfg.mapping, &geometry),
            columns: geometry.columns_per_row,
            banks: (0..geometry.total_banks()).map(|_| BankCtl::default()).collect(),
            queue: Vec::with_capacity(2 * cfg.queue_depth),
            reads: 0,
            writes: 0,
            cores: vec![CoreState::default(); traces.len()],
            completions: BinaryHeap::new(),
            throttled: HashMap::new(),
            actions: Vec::new(),
            tally: Tally::default(),
            next_ref: t.refi,
            refs: 0,
            refs_per_epoch: (refs_per_window / epochs).max(1),
            seq: 0,
            device,
            profile,
            defense,
            cfg,
            t,
            traces,
        }
    }

    fn translate(&self, bank: usize, row: u32) -> u32 {
        self.defense.as_ref().map_or(row, |d| d.defense.translate(bank, row))
    }

    fn issue(&mut self, kind: CommandKind, bank: usize, row: Option<u32>, not_before: u64) -> Result<(u64, Option<Event>), DramError> {
        let cycle = not_before.max(self.banks[bank].cursor).max(self.device.earliest(kind, bank));
        let cmd = Command { kind, bank, row, cycle };
        let ev = self.device.issue_command(cmd)?;
        self.banks[bank].cursor = cycle;
        Ok((cycle, ev))
    }

    /// Opens `row` and lets the defense observe the activation.
    fn activate(&mut self, bank: usize, row: u32, not_before: u64) -> Result<u64, DramError> {
        let (act, _) = self.issue(CommandKind::Act, bank, Some(row), not_before)?;
        self.banks[bank].open = Some(row);
        if let Some(d) = self.defense.as_mut() {
            d.on_activation(bank, row, act, &mut self.actions);
            for a in self.actions.drain(..) {
                match a {
                    DefenseAction::ThrottleUntil { bank, row, until } => {
                        self.throttled.insert((bank, row), until);
                    }
                    DefenseAction::CounterTransfer { bank } => self.banks[bank].work.push_back(Work::Transfer),
                    other => {
                        let b = other.bank();
                        self.banks[b].work.extend(other.implied_acts().into_iter().map(Work::Act));
                    }
                }
            }
        }
        Ok(act)
    }

    /// Precharges the open row (if any), then runs the bank's queued work.
    fn close(&mut self, bank: usize, not_before: u64) -> Result<(), DramError> {
        if let Some(row) = self.banks[bank].open.take() {
            self.precharge(bank, row, not_before)?;
        }
        let mut done = 0;
        while let Some(w) = self.banks[bank].work.pop_front() {
            done += 1;
            if done > WORK_LIMIT {
                self.tally.dropped_work += 1 + self.banks[bank].work.len() as u64;
                self.banks[bank].work.clear();
                break;
            }
            match w {
                Work::Transfer => {
                    let c = metadata_cycles(&self.t);
                    let b = &mut self.banks[bank];
                    b.cursor = b.cursor.max(not_before).max(self.device.earliest(CommandKind::Act, bank)) + c;
                    self.tally.metadata_acts += 1;
                    self.tally.metadata_cycles += c;
                }
                Work::Act(a) => {
                    let act = self.activate(bank, a.row(), not_before)?;
                    self.banks[bank].open = None;
                    let hold = act_hold_cycles(a, &self.t, self.columns);
                    let pre = self.precharge(bank, a.row(), act + hold)?;
                    if let ImpliedAct::Refresh(r) = a {
                        self.oracle.refresh_row(bank, r, pre);
                    }
                    self.tally.preventive_acts += 1;
                    self.tally.preventive_cycles += hold + self.t.rp;
                }
            }
        }
        self.banks[bank].hits = 0;
        Ok(())
    }

    fn precharge(&mut self, bank: usize, row: u32, not_before: u64) -> Result<u64, DramError> {
        let (pre, ev) = self.issue(CommandKind::Pre, bank, None, not_before)?;
        if let Some(Event::AggressorOnTime { ns, .. }) = ev {
            self.oracle.activate_and_check(self.profile, bank, row, ns, pre);
        }
        Ok(pre)
    }

    fn refresh(&mut self, now: u64) -> Result<(), DramError> {
        for b in 0..self.banks.len() {
            self.close(b, now)?;
        }
        let at = self.banks.iter().map(|b| b.cursor).max().unwrap_or(0).max(self.next_ref).max(now);
        let at = at.max(self.device.earliest(CommandKind::Ref, 0));
        let stride = self.device.refresh_tick(at)?;
        self.oracle.refresh_stride(&stride, at);
        self.tally.refresh_row_acts += stride.count as u64 * self.banks.len() as u64;
        self.refs += 1;
        if self.refs % self.refs_per_epoch == 0 {
            if let Some(d) = self.defense.as_mut() {
                d.defense.epoch_reset(at);
            }
        }
        let busy = self.device.refresh_busy_until();
        for b in &mut self.banks {
            b.cursor = b.cursor.max(busy);
        }
        self.next_ref += self.t.refi;
        Ok(())
    }

    fn can_issue(&self, c: usize, now: u64) -> bool {
        let core = &self.cores[c];
        let trace = &self.traces[c];
        let Some(req) = trace.requests.get(core.next) else {
            return false;
        };
        let room = if req.write { self.writes } else { self.reads } < self.cfg.queue_depth;
        room && core.outstanding < trace.window && core.last_issue + req.gap as u64 <= now
    }

    fn enqueue(&mut self, c: usize, now: u64) -> Result<(), SimError> {
        let req = self.traces[c].requests[self.cores[c].next];
        let loc = self.mapping.decode(req.addr)?;
        let core = &mut self.cores[c];
        core.next += 1;
        core.outstanding += 1;
        core.last_issue = now;
        if req.write {
            self.writes += 1;
        } else {
            self.reads += 1;
        }
        self.queue.push(Pending { core: c, seq: self.seq, bank: loc.bank, row: loc.row, write: req.write, release: now });
        self.seq += 1;
        Ok(())
    }

    /// FR-FCFS pick for `bank`: the oldest row hit while under the column
    /// cap, otherwise the oldest request.
    fn pick(&self, bank: usize, now: u64) -> Option<(usize, bool)> {
        let b = &self.banks[bank];
        let mut oldest: Option<(usize, bool)> = None;
        let mut hit: Option<usize> = None;
        for (i, p) in self.queue.iter().enumerate() {
            if p.bank != bank || p.release > now {
                continue;
            }
            let is_hit = b.open == Some(self.translate(bank, p.row));
            if is_hit && b.hits < self.cfg.column_cap && hit.is_none_or(|h| self.queue[h].seq > p.seq) {
                hit = Some(i);
            }
            if oldest.is_none_or(|(o, _)| self.queue[o].seq > p.seq) {
                oldest = Some((i, is_hit));
            }
        }
        hit.map(|h| (h, true)).or(oldest)
    }

    fn serve(&mut self, bank: usize, now: u64) -> Result<bool, SimError> {
        loop {
            let Some((i, is_hit)) = self.pick(bank, now) else {
                return Ok(false);
            };
            let p = self.queue[i];
            let phys = self.translate(bank, p.row);
            if !is_hit {
                let mut until = self.throttled.get(&(bank, phys)).copied().filter(|&u| u > now);
                if until.is_none() {
                    until = self.defense.as_mut().and_then(|d| d.gate(bank, phys, now));
                }
                if let Some(u) = until {
                    let u = u.max(now + 1);
                    self.queue[i].release = u;
                    self.tally.throttled_requests += 1;
                    self.tally.throttle_stall_cycles += u - now;
                    continue;
                }
                self.close(bank, now)?;
                self.activate(bank, phys, now)?;
                self.tally.demand_acts += 1;
                self.banks[bank].hits = 0;
            } else {
                self.tally.row_hits += 1;
            }
            self.queue.swap_remove(i);
            let kind = if p.write { CommandKind::Wr } else { CommandKind::Rd };
            let (col, _) = self.issue(kind, bank, None, now)?;
            let latency = if p.write { self.t.cwl } else { self.t.cl };
            self.completions.push(Reverse((col + latency + BURST_CYCLES, p.core)));
            let b = &mut self.banks[bank];
            b.hits += 1;
            b.cursor = col + self.t.ccd;
            if p.write {
                self.writes -= 1;
            } else {
                self.reads -= 1;
            }
            return Ok(true);
        }
    }

    fn next_event(&self, now: u64) -> Option<u64> {
        let mut next = self.completions.peek().map(|Reverse((t, _))| *t);
        let mut consider = |t: u64| {
            if t > now {
                next = Some(next.map_or(t, |n| n.min(t)));
            }
        };
        for (c, core) in self.cores.iter().enumerate() {
            let trace = &self.traces[c];
            if let Some(req) = trace.requests.get(core.next) {
                let room = if req.write { self.writes } else { self.reads } < self.cfg.queue_depth;
                if room && core.outstanding < trace.window {
                    consider(core.last_issue + req.gap as u64);
                }
            }
        }
        for p in &self.queue {
            consider(p.release.max(self.banks[p.bank].cursor));
        }
        next.map(|n| n.min(self.next_ref).max(now + 1))
    }

    pub fn run(mut self, max_cycles: u64) -> Result<Outcome, SimError> {
        let mut now = 0u64;
        let total: Vec<usize> = self.traces.iter().map(|t| t.requests.len()).collect();
        let mut completed = true;
        loop {
            while let Some(&Reverse((t, c))) = self.completions.peek() {
                if t > now {
                    break;
                }
                self.completions.pop();
                let core = &mut self.cores[c];
                core.outstanding -= 1;
                core.completed += 1;
                core.finish = core.finish.max(t);
            }
            if self.cores.iter().zip(&total).all(|(c, &n)| c.completed == n) {
                break;
            }
            if now > max_cycles {
                completed = false;
                break;
            }
            if now >= self.next_ref {
                self.refresh(now)?;
                continue;
            }
            let mut progress = true;
            while progress {
                progress = false;
                for c in 0..self.cores.len() {
                    while self.can_issue(c, now) {
                        self.enqueue(c, now)?;
                        progress = true;
                    }
                }
                for b in 0..self.banks.len() {
                    if self.banks[b].cursor <= now && self.serve(b, now)? {
                        progress = true;
                    }
                }
            }
            match self.next_event(now) {
                Some(t) => now = t,
                None => now = self.next_ref,
            }
        }
        for b in 0..self.banks.len() {
            self.close(b, now)?;
        }
        Ok(Outcome {
            finish: self.cores.iter().map(|c| c.finish).collect(),
            completed,
            cycles: now,
            tally: self.tally,
            device: self.device.counters(),
            flips: self.oracle.flips().to_vec(),
            defense: self.defense.as_ref().map(|d| d.defense.stats()),
            svard: self.defense.as_ref().map(|d| d.source.counters()).unwrap_or_default(),
        })
    }
}
