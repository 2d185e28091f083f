use std::collections::HashMap;

use super::{mix64, Defense, DefenseAction, DefenseContext, DefenseKind, DefenseStats};
use crate::profile::HcFirst;

/// Counting Bloom filter over row numbers. The estimate is the smallest of
/// the item's `k` counters, so it never falls below the true count.
#[derive(Debug, Clone)]
pub struct CountingBloomFilter {
    counters: Vec<u32>,
    hashes: usize,
    salt: u64,
}

impl CountingBloomFilter {
    pub fn new(counters: usize, hashes: usize, salt: u64) -> Self {
        CountingBloomFilter { counters: vec![0; counters], hashes, salt }
    }

    fn slot(&self, item: u32, i: usize) -> usize {
        let h = mix64((item as u64) ^ self.salt.wrapping_add((i as u64) << 32));
        (h % self.counters.len() as u64) as usize
    }

    pub fn insert(&mut self, item: u32) {
        for i in 0..self.hashes {
            let s = self.slot(item, i);
            self.counters[s] = self.counters[s].saturating_add(1);
        }
    }

    pub fn estimate(&self, item: u32) -> u32 {
        (0..self.hashes).map(|i| self.counters[self.slot(item, i)]).min().unwrap_or(0)
    }

    pub fn clear(&mut self) {
        self.counters.iter_mut().for_each(|c| *c = 0);
    }
}

/// Throttles rows whose recent activation count reaches the blacklist
/// threshold.
///
/// Two filters per bank are both updated on every activation; each epoch
/// (half a refresh window) the older one is cleared and the roles swap, so
/// the filter consulted always covers the previous and the current epoch.
///
/// A refresh window overlaps at most three epochs, so it sees at most
/// `2 * n_bl` activations admitted while the row was below the blacklist
/// threshold `n_bl`. Once blacklisted, a row's activations are spaced far
/// enough apart that the rest of the window admits at most
/// `t - 1 - 2 * n_bl` more.
#[derive(Debug, Clone)]
pub struct BlockHammer {
    filters: Vec<[CountingBloomFilter; 2]>,
    active: usize,
    epoch_start: u64,
    epoch_len: u64,
    window: u64,
    /// Earliest next activation of each blacklisted row.
    next_allowed: HashMap<(usize, u32), u64>,
    stats: DefenseStats,
}

impl BlockHammer {
    pub fn new(counters: usize, hashes: usize, ctx: &DefenseContext) -> Self {
        let filters = (0..ctx.geometry.total_banks())
            .map(|b| {
                let salt = mix64(ctx.seed ^ (b as u64).wrapping_mul(0x1F));
                [CountingBloomFilter::new(counters, hashes, salt), CountingBloomFilter::new(counters, hashes, salt)]
            })
            .collect();
        let window = ctx.timing.refw.max(2);
        BlockHammer {
            filters,
            active: 0,
            epoch_start: 0,
            epoch_len: window / 2,
            window,
            next_allowed: HashMap::new(),
            stats: DefenseStats::default(),
        }
    }

    /// Activations a row may accumulate over two epochs before throttling.
    pub fn blacklist_threshold(threshold: HcFirst) -> Option<u32> {
        threshold.get().map(|t| (t.saturating_sub(1) / 4).max(1))
    }

    /// Minimum spacing between activations of a blacklisted row; `None`
    /// when no activation budget is left and the row must wait for the
    /// filters to forget it.
    pub fn throttle_delay(&self, threshold: HcFirst) -> Option<u64> {
        let t = threshold.get()?;
        let n_bl = Self::blacklist_threshold(threshold)?;
        match t.saturating_sub(1 + 2 * n_bl) {
            0 => None,
            1 => Some(self.window + 1),
            r => Some(self.window.div_ceil(r as u64 - 1)),
        }
    }

    pub fn estimate(&self, bank: usize, row: u32) -> u32 {
        self.filters[bank][self.active].estimate(row)
    }
}

impl Defense for BlockHammer {
    fn kind(&self) -> DefenseKind {
        DefenseKind::BlockHammer
    }

    fn on_activation(&mut self, bank: usize, row: u32, cycle: u64, threshold: HcFirst, _out: &mut Vec<DefenseAction>) {
        let before = self.estimate(bank, row);
        for f in &mut self.filters[bank] {
            f.insert(row);
        }
        let Some(n_bl) = Self::blacklist_threshold(threshold) else { return };
        let after = self.estimate(bank, row);
        if before < n_bl && after >= n_bl {
            self.stats.throttles += 1;
        }
        if after >= n_bl {
            if let Some(delay) = self.throttle_delay(threshold) {
                self.next_allowed.insert((bank, row), cycle + delay);
            }
        }
    }

    fn gate(&mut self, bank: usize, row: u32, cycle: u64, threshold: HcFirst) -> Option<u64> {
        let n_bl = Self::blacklist_threshold(threshold)?;
        if self.estimate(bank, row) < n_bl {
            return None;
        }
        let release = match self.throttle_delay(threshold) {
            Some(_) => *self.next_allowed.get(&(bank, row))?,
            None => self.epoch_start + self.epoch_len,
        };
        (release > cycle).then_some(release)
    }

    fn epoch_reset(&mut self, cycle: u64) {
        for pair in &mut self.filters {
            pair[self.active].clear();
        }
        self.active ^= 1;
        self.epoch_start = cycle;
        self.next_allowed.retain(|_, &mut at| at > cycle);
    }

    fn epochs_per_window(&self) -> u64 {
        2
    }

    fn stats(&self) -> DefenseStats {
        self.stats
    }
}
