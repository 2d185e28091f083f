use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    action_trigger, neighbors, usable_rows, Defense, DefenseAction, DefenseContext, DefenseKind, DefenseStats,
    SpaceSaving,
};
use crate::profile::HcFirst;

/// Logical-to-physical row map that starts as the identity; only moved rows
/// are stored.
#[derive(Debug, Clone, Default)]
pub(crate) struct RowMap {
    l2p: HashMap<(usize, u32), u32>,
    p2l: HashMap<(usize, u32), u32>,
}

impl RowMap {
    pub fn physical(&self, bank: usize, logical: u32) -> u32 {
        self.l2p.get(&(bank, logical)).copied().unwrap_or(logical)
    }

    pub fn logical(&self, bank: usize, physical: u32) -> u32 {
        self.p2l.get(&(bank, physical)).copied().unwrap_or(physical)
    }

    /// Records that `logical` now lives in `physical`.
    pub fn place(&mut self, bank: usize, logical: u32, physical: u32) {
        if logical == physical {
            self.l2p.remove(&(bank, logical));
            self.p2l.remove(&(bank, physical));
        } else {
            self.l2p.insert((bank, logical), physical);
            self.p2l.insert((bank, physical), logical);
        }
    }

    /// Moves `logical` from wherever it is into the free row `physical`.
    pub fn relocate(&mut self, bank: usize, logical: u32, physical: u32) {
        let from = self.physical(bank, logical);
        self.p2l.remove(&(bank, from));
        self.l2p.remove(&(bank, logical));
        self.place(bank, logical, physical);
    }

    /// Exchanges the contents of two physical rows.
    pub fn swap(&mut self, bank: usize, a: u32, b: u32) {
        let (la, lb) = (self.logical(bank, a), self.logical(bank, b));
        self.p2l.remove(&(bank, a));
        self.p2l.remove(&(bank, b));
        self.place(bank, la, b);
        self.place(bank, lb, a);
    }
}

/// Randomized row swap: a row whose tracked count reaches the trigger has
/// its neighbors refreshed and its contents exchanged with a random row, so
/// further hammering of the same data lands on a fresh location.
#[derive(Debug, Clone)]
pub struct Rrs {
    trackers: Vec<SpaceSaving>,
    map: RowMap,
    rows: u32,
    usable: u32,
    rng: ChaCha8Rng,
    stats: DefenseStats,
}

impl Rrs {
    pub fn new(tracker_entries: usize, ctx: &DefenseContext) -> Self {
        let rows = ctx.geometry.rows_per_bank;
        Rrs {
            trackers: vec![SpaceSaving::new(tracker_entries); ctx.geometry.total_banks()],
            map: RowMap::default(),
            rows,
            usable: usable_rows(rows),
            rng: ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x5252_5300),
            stats: DefenseStats::default(),
        }
    }

    /// Logical row held by physical row `row`.
    pub fn logical(&self, bank: usize, row: u32) -> u32 {
        self.map.logical(bank, row)
    }
}

impl Defense for Rrs {
    fn kind(&self) -> DefenseKind {
        DefenseKind::Rrs
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
        if self.usable < 2 || row >= self.usable {
            self.stats.refreshes += 1;
            return;
        }
        let mut other = self.rng.random_range(0..self.usable - 1);
        if other >= row {
            other += 1;
        }
        self.map.swap(bank, row, other);
        self.stats.swaps += 1;
        out.push(DefenseAction::SwapRows { bank, a: row, b: other });
    }

    fn epoch_reset(&mut self, _cycle: u64) {
        self.trackers.iter_mut().for_each(SpaceSaving::clear);
    }

    fn translate(&self, bank: usize, row: u32) -> u32 {
        self.map.physical(bank, row)
    }

    fn stats(&self) -> DefenseStats {
        self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defenses::testkit::{ctx, max_exposure};
    use proptest::prelude::*;

    #[test]
    fn row_map_swaps_are_bijective() {
        let mut m = RowMap::default();
        m.swap(0, 1, 5);
        m.swap(0, 5, 9);
        assert_eq!((m.physical(0, 1), m.physical(0, 5), m.physical(0, 9)), (9, 1, 5));
        for l in [1, 5, 9] {
            assert_eq!(m.logical(0, m.physical(0, l)), l);
        }
        m.swap(0, 9, 5);
        m.swap(0, 1, 5);
        assert!(m.l2p.is_empty() && m.p2l.is_empty());
    }

    #[test]
    fn swap_follows_victim_refresh() {
        let mut d = Rrs::new(16, &ctx(1, 64, 8));
        let mut out = Vec::new();
        for i in 0..4 {
            d.on_activation(0, 10, i, HcFirst::new(8), &mut out);
        }
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], DefenseAction::RefreshRows { bank: 0, rows: vec![9, 11] });
        let DefenseAction::SwapRows { a, b, .. } = out[1] else { panic!("{:?}", out[1]) };
        assert_eq!(a, 10);
        assert!(b != 10 && b < usable_rows(64));
        assert_eq!(d.translate(0, 10), b);
        assert_eq!(d.logical(0, 10), b);
    }

    proptest! {
        #[test]
        fn mapping_stays_bijective(stream in proptest::collection::vec(0u32..60, 0..2000), t in 1u32..20) {
            let mut d = Rrs::new(8, &ctx(1, 64, t));
            let mut out = Vec::new();
            for (i, &l) in stream.iter().enumerate() {
                let p = d.translate(0, l);
                d.on_activation(0, p, i as u64, HcFirst::new(t), &mut out);
            }
            let mut seen = vec![false; 64];
            for l in 0..64 {
                let p = d.translate(0, l) as usize;
                prop_assert!(!seen[p]);
                seen[p] = true;
                prop_assert_eq!(d.logical(0, p as u32), l);
            }
        }

        #[test]
        // below ~24 each swap's own activations retrigger as often as not
        fn no_victim_reaches_threshold(stream in proptest::collection::vec(0u32..60, 0..3000), t in 32u32..128) {
            let mut d = Rrs::new(64, &ctx(1, 64, t));
            prop_assert!(max_exposure(&mut d, 64, &stream, t) < t);
        }
    }
}
