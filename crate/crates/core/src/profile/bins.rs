use serde::{Deserialize, Serialize};

use super::{Bucket, HcFirst, VulnerabilityProfile};
use crate::error::ConfigError;

/// Vulnerability bins: the threshold of bin `i` is the smallest HC_first of
/// the rows assigned to it. Thresholds are strictly increasing, so they also
/// serve as the lower edges of the bins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinTable {
    pub bucket: Bucket,
    pub thresholds: Vec<HcFirst>,
}

impl BinTable {
    pub const MAX_BINS: usize = 16;

    pub fn new(bucket: Bucket, thresholds: Vec<HcFirst>) -> Result<Self, ConfigError> {
        if thresholds.is_empty() || thresholds.len() > Self::MAX_BINS {
            return Err(ConfigError::Bins(format!(
                "bin count must be in 1..=16 (4-bit ids), got {}",
                thresholds.len()
            )));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::Bins("bin thresholds must strictly increase".into()));
        }
        Ok(BinTable { bucket, thresholds })
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn threshold(&self, bin: u8) -> HcFirst {
        self.thresholds[bin as usize]
    }

    /// Bin whose range contains `value`.
    pub fn bin_of(&self, value: HcFirst) -> u8 {
        (self.thresholds.partition_point(|&t| t <= value).max(1) - 1) as u8
    }
}

/// Partitions the observed HC_first values of `bucket` into at most
/// `bin_count` contiguous bins.
///
/// With no more distinct values than bins, each value gets its own bin.
/// Otherwise the split maximizes the total threshold granted to rows
/// (sum over rows of their bin's minimum), i.e. it minimizes overprotection.
/// Rows without an observed flip join the top bin.
pub fn assign_bins(
    profile: &VulnerabilityProfile,
    bin_count: usize,
    bucket: Bucket,
) -> Result<(BinTable, Vec<u8>), ConfigError> {
    if !(1..=BinTable::MAX_BINS).contains(&bin_count) {
        return Err(ConfigError::Bins(format!("bin_count must be in 1..=16, got {bin_count}")));
    }
    let mut values: Vec<(HcFirst, u64)> = Vec::new();
    {
        let mut sorted: Vec<HcFirst> = profile.rows.iter().map(|r| r.hcfirst(bucket)).collect();
        sorted.sort_unstable();
        for v in sorted {
            match values.last_mut() {
                Some((last, c)) if *last == v => *c += 1,
                _ => values.push((v, 1)),
            }
        }
    }
    if values.is_empty() {
        let table = BinTable::new(bucket, vec![HcFirst::NONE])?;
        return Ok((table, Vec::new()));
    }

    let starts = optimal_partition(&values, bin_count);
    let thresholds: Vec<HcFirst> = starts.iter().map(|&s| values[s].0).collect();
    let table = BinTable::new(bucket, thresholds)?;
    let ids = profile.rows.iter().map(|r| table.bin_of(r.hcfirst(bucket))).collect();
    Ok((table, ids))
}

/// Start indices of the groups in the best contiguous partition.
fn optimal_partition(values: &[(HcFirst, u64)], k: usize) -> Vec<usize> {
    let d = values.len();
    if d <= k {
        return (0..d).collect();
    }
    let max_finite = values.iter().filter_map(|(v, _)| v.get()).max().unwrap_or(1) as f64;
    let worth = |v: HcFirst| v.get().map_or(2.0 * max_finite, |x| x as f64);
    let mut suffix = vec![0u64; d + 1];
    for i in (0..d).rev() {
        suffix[i] = suffix[i + 1] + values[i].1;
    }
    // group [i, j) is worth count(i..j) * value[i]
    let gain = |i: usize, j: usize| (suffix[i] - suffix[j]) as f64 * worth(values[i].0);
    // best[g][j]: best value covering values[..j] with g groups
    let neg = f64::NEG_INFINITY;
    let mut best = vec![vec![neg; d + 1]; k + 1];
    let mut from = vec![vec![0usize; d + 1]; k + 1];
    best[0][0] = 0.0;
    for g in 1..=k {
        for j in g..=d {
            for i in (g - 1)..j {
                if best[g - 1][i] == neg {
                    continue;
                }
                let v = best[g - 1][i] + gain(i, j);
                if v > best[g][j] {
                    best[g][j] = v;
                    from[g][j] = i;
                }
            }
        }
    }
    let mut starts = Vec::with_capacity(k);
    let mut j = d;
    for g in (1..=k).rev() {
        let i = from[g][j];
        starts.push(i);
        j = i;
    }
    starts.reverse();
    starts
}

impl VulnerabilityProfile {
    /// Returns a copy with bin ids assigned, plus the bin table.
    pub fn with_bins(&self, bin_count: usize, bucket: Bucket) -> Result<(Self, BinTable), ConfigError> {
        let (table, ids) = assign_bins(self, bin_count, bucket)?;
        let mut out = self.clone();
        for (row, id) in out.rows.iter_mut().zip(ids) {
            row.bin_id = id;
        }
        Ok((out, table))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::DeviceGeometry;
    use crate::oracle::DataPattern;
    use crate::profile::{generate_profile, ProfileTemplate, RowVulnerability, HAMMER_GRID};

    fn profile_from(values: &[u32]) -> VulnerabilityProfile {
        let rows = values
            .iter()
            .map(|&v| {
                let h = if v == u32::MAX { HcFirst::NONE } else { HcFirst::new(v) };
                RowVulnerability { hcfirst: [h; 3], ber_at_128k: 0.01, wcdp: DataPattern::Rs, bin_id: 0 }
            })
            .collect();
        VulnerabilityProfile {
            geometry: DeviceGeometry::desk(1, values.len() as u32),
            rows,
            seed: 0,
            template: None,
        }
    }

    #[test]
    fn single_bin_is_global_min() {
        let p = profile_from(&[300, 64, 128, 1000]);
        let (t, ids) = assign_bins(&p, 1, Bucket::Ns36).unwrap();
        assert_eq!(t.thresholds, vec![HcFirst::new(64)]);
        assert!(ids.iter().all(|&i| i == 0));
    }

    #[test]
    fn two_values_two_bins() {
        let p = profile_from(&[64, 128, 128, 64]);
        let (t, ids) = assign_bins(&p, 2, Bucket::Ns36).unwrap();
        assert_eq!(t.thresholds, vec![HcFirst::new(64), HcFirst::new(128)]);
        assert_eq!(ids, vec![0, 1, 1, 0]);
    }

    #[test]
    fn s0_fourteen_bins_one_per_grid_point() {
        let t = ProfileTemplate::preset("S0").unwrap();
        let p = generate_profile(&t, DeviceGeometry::desk(4, 1024), 4).unwrap();
        let (table, ids) = assign_bins(&p, 14, Bucket::Ns36).unwrap();
        let mut present: Vec<u32> = p.rows.iter().map(|r| r.hcfirst[0].raw()).collect();
        present.sort_unstable();
        present.dedup();
        assert_eq!(table.len(), present.len());
        for (row, id) in p.rows.iter().zip(&ids) {
            // exhaustive: each row lands on its own grid value
            assert_eq!(table.threshold(*id), row.hcfirst[0]);
            assert!(HAMMER_GRID.contains(&table.threshold(*id).raw()));
        }
    }

    #[test]
    fn sentinel_rows_go_to_top_bin() {
        let p = profile_from(&[64, u32::MAX, 128]);
        let (t, ids) = assign_bins(&p, 2, Bucket::Ns36).unwrap();
        assert_eq!(ids[1], (t.len() - 1) as u8);
        let (t3, ids3) = assign_bins(&p, 3, Bucket::Ns36).unwrap();
        assert_eq!(t3.threshold(ids3[1]), HcFirst::NONE);
    }

    #[test]
    fn rejects_bad_counts() {
        let p = profile_from(&[1, 2]);
        assert!(assign_bins(&p, 0, Bucket::Ns36).is_err());
        assert!(assign_bins(&p, 17, Bucket::Ns36).is_err());
        assert!(BinTable::new(Bucket::Ns36, vec![HcFirst::new(1); 17]).is_err());
    }

    #[test]
    fn partition_prefers_dense_values() {
        // many rows at 100, few at 10: the 100s deserve their own bin
        let mut v = vec![10, 11];
        v.extend(std::iter::repeat(100).take(50));
        v.push(1000);
        let p = profile_from(&v);
        let (t, _) = assign_bins(&p, 2, Bucket::Ns36).unwrap();
        assert_eq!(t.thresholds, vec![HcFirst::new(10), HcFirst::new(100)]);
    }
}
