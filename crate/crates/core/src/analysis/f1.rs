use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dram::{DeviceGeometry, SubarrayLayout};
use crate::error::ConfigError;
use crate::profile::{snap_down_to_grid, Bucket, HcFirst, VulnerabilityProfile, HAMMER_GRID};

/// Score above which a feature is reported as correlated.
pub const F1_THRESHOLD: f64 = 0.7;

/// One bit of a row's spatial coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpatialFeature {
    BankBit(u32),
    RowBit(u32),
    SubarrayBit(u32),
    /// Bit of the row's distance to the nearer subarray edge.
    DistanceBit(u32),
}

fn bits_for(max_value: u32) -> u32 {
    (u32::BITS - max_value.leading_zeros()).max(1)
}

impl SpatialFeature {
    pub fn value(self, bank: usize, row: u32, layout: &SubarrayLayout) -> u8 {
        let (v, bit) = match self {
            SpatialFeature::BankBit(i) => (bank as u64, i),
            SpatialFeature::RowBit(i) => (row as u64, i),
            SpatialFeature::SubarrayBit(i) => (layout.subarray_of(row) as u64, i),
            SpatialFeature::DistanceBit(i) => (distance_to_edge(row, layout) as u64, i),
        };
        ((v >> bit) & 1) as u8
    }

    /// Every feature bit that can vary on this geometry.
    pub fn all(geometry: &DeviceGeometry, layout: &SubarrayLayout) -> Vec<SpatialFeature> {
        let max_distance = layout.sizes().into_iter().map(|s| s.saturating_sub(1) / 2).max().unwrap_or(0);
        let mut out = Vec::new();
        out.extend((0..geometry.bank_bits().max(1)).map(SpatialFeature::BankBit));
        out.extend((0..geometry.row_bits()).map(SpatialFeature::RowBit));
        out.extend((0..bits_for(layout.starts.len().saturating_sub(1) as u32)).map(SpatialFeature::SubarrayBit));
        out.extend((0..bits_for(max_distance)).map(SpatialFeature::DistanceBit));
        out
    }
}

fn distance_to_edge(row: u32, layout: &SubarrayLayout) -> u32 {
    let s = layout.subarray_of(row);
    let start = layout.starts[s];
    let end = layout.starts.get(s + 1).copied().unwrap_or(layout.rows);
    (row - start).min(end - 1 - row)
}

impl fmt::Display for SpatialFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpatialFeature::BankBit(i) => write!(f, "bank_bit_{i}"),
            SpatialFeature::RowBit(i) => write!(f, "row_bit_{i}"),
            SpatialFeature::SubarrayBit(i) => write!(f, "subarray_bit_{i}"),
            SpatialFeature::DistanceBit(i) => write!(f, "distance_bit_{i}"),
        }
    }
}

impl FromStr for SpatialFeature {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ConfigError::Parameter(format!("unknown feature `{s}`"));
        let (kind, bit) = s.rsplit_once("_bit_").ok_or_else(bad)?;
        let bit: u32 = bit.parse().map_err(|_| bad())?;
        match kind {
            "bank" => Ok(SpatialFeature::BankBit(bit)),
            "row" => Ok(SpatialFeature::RowBit(bit)),
            "subarray" => Ok(SpatialFeature::SubarrayBit(bit)),
            "distance" => Ok(SpatialFeature::DistanceBit(bit)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for SpatialFeature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SpatialFeature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Index into the hammer-count grid; `None` for rows that never flip.
pub fn hcfirst_class(h: HcFirst) -> Option<usize> {
    let v = h.get()?;
    let g = snap_down_to_grid(v as f64);
    HAMMER_GRID.iter().position(|&x| x == g)
}

/// Macro-averaged F1 over every class that appears in `truth` or `pred`.
pub fn macro_f1(truth: &[usize], pred: &[usize]) -> f64 {
    let n = HAMMER_GRID.len().max(truth.iter().chain(pred).map(|&c| c + 1).max().unwrap_or(0));
    let (mut tp, mut fp, mut fneg) = (vec![0u64; n], vec![0u64; n], vec![0u64; n]);
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    let scores: Vec<f64> = (0..n)
        .filter(|&c| tp[c] + fp[c] + fneg[c] > 0)
        .map(|c| 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fneg[c]) as f64)
        .collect();
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// Predicts each row's class as the majority class among rows sharing its
/// feature value (ties go to the lower class) and scores it with macro F1.
/// Depends only on the multiset of pairs, not their order.
pub fn majority_f1(pairs: &[(u8, usize)]) -> f64 {
    let classes = HAMMER_GRID.len().max(pairs.iter().map(|p| p.1 + 1).max().unwrap_or(0));
    let mut counts = vec![vec![0u64; classes]; 2];
    for &(v, c) in pairs {
        counts[v as usize & 1][c] += 1;
    }
    let majority: Vec<usize> = counts
        .iter()
        .map(|row| (0..classes).rev().max_by_key(|&c| row[c]).unwrap_or(0))
        .collect();
    let truth: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let pred: Vec<usize> = pairs.iter().map(|p| majority[p.0 as usize & 1]).collect();
    macro_f1(&truth, &pred)
}

/// F1 of predicting each row's HC_first class (36ns bucket) from one feature bit.
pub fn feature_f1(profile: &VulnerabilityProfile, layout: &SubarrayLayout, feature: SpatialFeature) -> f64 {
    let pairs: Vec<(u8, usize)> = profile
        .iter()
        .filter_map(|(b, r, v)| Some((feature.value(b, r, layout), hcfirst_class(v.hcfirst(Bucket::Ns36))?)))
        .collect();
    majority_f1(&pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature: SpatialFeature,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub threshold: f64,
    pub scores: Vec<FeatureScore>,
    pub correlated: Vec<SpatialFeature>,
}

pub fn f1_report(profile: &VulnerabilityProfile, layout: &SubarrayLayout, threshold: f64) -> F1Report {
    let scores: Vec<FeatureScore> = SpatialFeature::all(&profile.geometry, layout)
        .into_iter()
        .map(|feature| FeatureScore { feature, f1: feature_f1(profile, layout, feature) })
        .collect();
    let correlated = scores.iter().filter(|s| s.f1 > threshold).map(|s| s.feature).collect();
    F1Report { threshold, scores, correlated }
}

/// Overwrites HC_first so rows whose `feature` bit is set get `when_set`
/// and the rest get `when_clear`, then swaps each row's value with
/// probability `noise`. Slower buckets keep their ratio to the 36ns value.
pub fn plant_correlation(
    profile: &VulnerabilityProfile,
    layout: &SubarrayLayout,
    feature: SpatialFeature,
    when_set: u32,
    when_clear: u32,
    noise: f64,
    seed: u64,
) -> VulnerabilityProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = profile.clone();
    let rpb = profile.rows_per_bank() as usize;
    for (i, row) in out.rows.iter_mut().enumerate() {
        let set = feature.value(i / rpb, (i % rpb) as u32, layout) == 1;
        let set = set ^ rng.random_bool(noise.clamp(0.0, 1.0));
        let target = if set { when_set } else { when_clear };
        let base = row.hcfirst[0].get().unwrap_or(target) as f64;
        for h in &mut row.hcfirst {
            if let Some(v) = h.get() {
                *h = HcFirst::new(((v as f64 / base) * target as f64).round().max(1.0) as u32);
            }
        }
    }
    out
}
