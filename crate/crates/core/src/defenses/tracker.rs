use std::collections::{BTreeSet, HashMap};

/// Space-Saving frequent-item tracker with `capacity` counters.
///
/// Estimates never undercount: an item entering the table starts one above
/// the largest count ever displaced, which bounds the true count of every
/// unmonitored item. Removing an item (after its count has been acted on)
/// keeps that bound intact.
#[derive(Debug, Clone)]
pub struct SpaceSaving {
    capacity: usize,
    counts: HashMap<u32, u32>,
    order: BTreeSet<(u32, u32)>,
    floor: u32,
}

impl SpaceSaving {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        SpaceSaving { capacity, counts: HashMap::new(), order: BTreeSet::new(), floor: 0 }
    }

    /// Counts one occurrence of `item`; returns its new estimate.
    pub fn insert(&mut self, item: u32) -> u32 {
        if let Some(c) = self.counts.get_mut(&item) {
            self.order.remove(&(*c, item));
            *c += 1;
            self.order.insert((*c, item));
            return *c;
        }
        if self.counts.len() == self.capacity {
            let (min, victim) = self.order.pop_first().expect("full table");
            self.counts.remove(&victim);
            self.floor = self.floor.max(min);
        }
        let c = self.floor + 1;
        self.counts.insert(item, c);
        self.order.insert((c, item));
        c
    }

    /// Current estimate for `item`.
    pub fn estimate(&self, item: u32) -> u32 {
        self.counts.get(&item).copied().unwrap_or(self.floor)
    }

    pub fn remove(&mut self, item: u32) {
        if let Some(c) = self.counts.remove(&item) {
            self.order.remove(&(c, item));
        }
    }

    pub fn clear(&mut self) {
        self.counts.clear();
        self.order.clear();
        self.floor = 0;
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_below_capacity() {
        let mut s = SpaceSaving::new(4);
        for x in [1, 2, 1, 3, 1] {
            s.insert(x);
        }
        assert_eq!((s.estimate(1), s.estimate(2), s.estimate(9)), (3, 1, 0));
    }

    #[test]
    fn eviction_overestimates() {
        let mut s = SpaceSaving::new(2);
        s.insert(1);
        s.insert(1);
        s.insert(2);
        assert_eq!(s.insert(3), 2);
        assert_eq!(s.estimate(2), 1);
    }

    proptest! {
        #[test]
        fn never_undercounts(stream in proptest::collection::vec(0u32..12, 0..400), cap in 1usize..8, removals in proptest::collection::vec(0u32..12, 0..10)) {
            let mut s = SpaceSaving::new(cap);
            let mut truth: HashMap<u32, u32> = HashMap::new();
            let mut removed = false;
            for (i, &x) in stream.iter().enumerate() {
                s.insert(x);
                *truth.entry(x).or_default() += 1;
                if i % 37 == 0 {
                    if let Some(&r) = removals.get(i / 37) {
                        s.remove(r);
                        truth.remove(&r);
                        removed = true;
                    }
                }
                for (&k, &v) in &truth {
                    prop_assert!(s.estimate(k) >= v, "item {} est {} true {}", k, s.estimate(k), v);
                }
            }
            // the classic bound: overestimate at most stream length / capacity
            let n = stream.len() as u32;
            for (&k, &v) in truth.iter().filter(|_| !removed) {
                prop_assert!(s.estimate(k) <= v + n / cap as u32 + 1);
            }
        }
    }
}
