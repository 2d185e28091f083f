use std::collections::{BTreeMap, HashMap};

use super::{action_trigger, neighbors, Defense, DefenseAction, DefenseContext, DefenseKind, DefenseStats};
use crate::profile::HcFirst;

/// Small LRU set keyed by (bank, row).
#[derive(Debug, Clone)]
struct Lru {
    capacity: usize,
    stamp: u64,
    by_key: HashMap<(usize, u32), u64>,
    by_stamp: BTreeMap<u64, (usize, u32)>,
}

impl Lru {
    fn new(capacity: usize) -> Self {
        Lru { capacity, stamp: 0, by_key: HashMap::new(), by_stamp: BTreeMap::new() }
    }

    /// Touches `key`; returns whether it was already cached.
    fn touch(&mut self, key: (usize, u32)) -> bool {
        self.stamp += 1;
        let hit = match self.by_key.insert(key, self.stamp) {
            Some(old) => {
                self.by_stamp.remove(&old);
                true
            }
            None => false,
        };
        self.by_stamp.insert(self.stamp, key);
        if self.by_key.len() > self.capacity {
            let (_, k) = self.by_stamp.pop_first().expect("non-empty");
            self.by_key.remove(&k);
        }
        hit
    }

    fn clear(&mut self) {
        self.by_key.clear();
        self.by_stamp.clear();
    }
}

/// Hybrid tracking: a group counter per `group_size` rows until the group
/// reaches `gamma` activations, then a per-row counter held in DRAM and
/// cached on chip. A cache miss costs one counter transfer through a
/// metadata row.
#[derive(Debug, Clone)]
pub struct Hydra {
    rows: u32,
    group_size: u32,
    gamma: Option<u32>,
    /// Per bank, per group: activations so far, or `None` once per-row.
    groups: Vec<Vec<Option<u32>>>,
    row_counts: HashMap<(usize, u32), u32>,
    cache: Lru,
    stats: DefenseStats,
}

impl Hydra {
    pub fn new(rcc_entries: usize, group_size: u32, ctx: &DefenseContext) -> Self {
        let rows = ctx.geometry.rows_per_bank;
        let groups = rows.div_ceil(group_size) as usize;
        Hydra {
            rows,
            group_size,
            gamma: ctx.base_threshold.get().map(|b| b.div_ceil(4).max(1)),
            groups: vec![vec![Some(0); groups]; ctx.geometry.total_banks()],
            row_counts: HashMap::new(),
            cache: Lru::new(rcc_entries),
            stats: DefenseStats::default(),
        }
    }

    pub fn gamma(&self) -> Option<u32> {
        self.gamma
    }

    /// Whether `row`'s group has switched to per-row counting.
    pub fn is_row_tracked(&self, bank: usize, row: u32) -> bool {
        self.groups[bank][(row / self.group_size) as usize].is_none()
    }
}

impl Defense for Hydra {
    fn kind(&self) -> DefenseKind {
        DefenseKind::Hydra
    }

    fn on_activation(&mut self, bank: usize, row: u32, _cycle: u64, threshold: HcFirst, out: &mut Vec<DefenseAction>) {
        let (Some(gamma), Some(trigger)) = (self.gamma, action_trigger(threshold)) else {
            return;
        };
        let g = (row / self.group_size) as usize;
        if let Some(count) = self.groups[bank][g].as_mut() {
            *count += 1;
            if *count < gamma {
                return;
            }
            // every row inherits the group count as an upper bound
            self.groups[bank][g] = None;
            let first = g as u32 * self.group_size;
            for r in first..(first + self.group_size).min(self.rows) {
                self.row_counts.insert((bank, r), gamma);
            }
            if gamma < trigger {
                return;
            }
        } else {
            if !self.cache.touch((bank, row)) {
                self.stats.counter_transfers += 1;
                out.push(DefenseAction::CounterTransfer { bank });
            }
            let c = self.row_counts.entry((bank, row)).or_insert(gamma);
            *c += 1;
            if *c < trigger {
                return;
            }
        }
        self.row_counts.insert((bank, row), 0);
        self.stats.refreshes += 1;
        out.push(DefenseAction::RefreshRows { bank, rows: neighbors(row, self.rows) });
    }

    fn epoch_reset(&mut self, _cycle: u64) {
        for bank in &mut self.groups {
            bank.iter_mut().for_each(|g| *g = Some(0));
        }
        self.row_counts.clear();
        self.cache.clear();
    }

    fn stats(&self) -> DefenseStats {
        self.stats
    }
}
