use super::rrs::RowMap;
use super::{
    action_trigger, neighbors, reserved_rows, usable_rows, Defense, DefenseAction, DefenseContext, DefenseKind,
    DefenseStats, SpaceSaving,
};
use crate::profile::HcFirst;

/// Quarantine-based isolation: a row reaching the trigger has its neighbors
/// refreshed and is moved into a quarantine region at the top of the bank,
/// evicting the slot's previous occupant back to its home row. Once every
/// slot has been used in the current epoch, further triggers only refresh.
#[derive(Debug, Clone)]
pub struct Aqua {
    trackers: Vec<SpaceSaving>,
    map: RowMap,
    rows: u32,
    base: u32,
    slots: u32,
    next_slot: Vec<u32>,
    migrated: Vec<u32>,
    stats: DefenseStats,
}

impl Aqua {
    pub fn new(tracker_entries: usize, quarantine_divisor: u32, ctx: &DefenseContext) -> Self {
        let rows = ctx.geometry.rows_per_bank;
        let banks = ctx.geometry.total_banks();
        Aqua {
            trackers: vec![SpaceSaving::new(tracker_entries); banks],
            map: RowMap::default(),
            rows,
            base: usable_rows(rows),
            slots: (rows / quarantine_divisor).clamp(1, reserved_rows(rows)),
            next_slot: vec![0; banks],
            migrated: vec![0; banks],
            stats: DefenseStats::default(),
        }
    }

    pub fn quarantine_slots(&self) -> u32 {
        self.slots
    }

    pub fn is_quarantined(&self, bank: usize, logical: u32) -> bool {
        self.map.physical(bank, logical) >= self.base
    }
}

impl Defense for Aqua {
    fn kind(&self) -> DefenseKind {
        DefenseKind::Aqua
    }

    fn on_activation(&mut self, bank: usize, row: u32, _cycle: u64, threshold: HcFirst, out: &mut Vec<DefenseAction>) {
        let Some(trigger) = action_trigger(threshold) else {
            return;
        };
        if self.trackers[bank].insert(row) < trigger {
            return;
        }
        self.trackers[bank].remove(row);
        out.push(DefenseAction::RefreshRows { bank, rows: neighbors(row, self.rows) });
        let dst = self.base + self.next_slot[bank];
        if self.migrated[bank] >= self.slots || dst == row {
            self.stats.refreshes += 1;
            self.stats.fallbacks += 1;
            return;
        }
        let logical = self.map.logical(bank, row);
        let occupant = self.map.logical(bank, dst);
        // an empty slot maps to itself; anything else is a displaced row
        let evict_to = (occupant != dst).then_some(occupant);
        if let Some(home) = evict_to {
            self.map.relocate(bank, home, home);
        }
        self.map.relocate(bank, logical, dst);
        self.next_slot[bank] = (self.next_slot[bank] + 1) % self.slots;
        self.migrated[bank] += 1;
        self.stats.migrations += 1;
        out.push(DefenseAction::MigrateRow { bank, src: row, dst, evict_to });
    }

    fn epoch_reset(&mut self, _cycle: u64) {
        self.trackers.iter_mut().for_each(SpaceSaving::clear);
        self.migrated.iter_mut().for_each(|m| *m = 0);
    }

    fn translate(&self, bank: usize, row: u32) -> u32 {
        self.map.physical(bank, row)
    }

    fn stats(&self) -> DefenseStats {
        self.stats
    }
}
