//! Per-row read-disturbance vulnerability profiles.
//!
//! A profile stores, for every row of every bank, the first hammer count that
//! flips a bit (HC_first) under three aggressor on-times, the BER at 128K
//! hammers, the worst-case data pattern, and the row's Svärd bin. Profiles are
//! generated from module templates, scaled to future worst-case HC_first
//! values, and binned into at most 16 vulnerability classes.

mod bins;
mod io;
mod stats;
mod template;

pub use bins::{assign_bins, BinTable};
pub use io::{read_profile, write_profile, ProfileHeader};
pub use stats::{profile_stats, BankStats, GridHistogram, ProfileSummary};
pub use template::{ChunkElevation, ProfileTemplate};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dram::DeviceGeometry;
use crate::error::ConfigError;
use crate::oracle::DataPattern;

/// Tested hammer counts, in activations per aggressor.
pub const HAMMER_GRID: [u32; 14] = [
    1024, 2048, 4096, 8192, 12288, 16384, 24576, 32768, 40960, 49152, 57344, 65536, 98304, 131072,
];

/// Hammer count used to pick the worst-case data pattern.
pub const WCDP_HAMMERS: u32 = 131072;

/// Largest grid value not above `x`, or the smallest grid value.
pub fn snap_down_to_grid(x: f64) -> u32 {
    HAMMER_GRID.iter().rev().copied().find(|&g| g as f64 <= x).unwrap_or(HAMMER_GRID[0])
}

/// Nearest grid value on a log scale.
pub fn snap_to_grid(x: f64) -> u32 {
    let mut best = HAMMER_GRID[0];
    let mut best_d = f64::INFINITY;
    for &g in &HAMMER_GRID {
        let d = (x.ln() - (g as f64).ln()).abs();
        if d < best_d {
            best = g;
            best_d = d;
        }
    }
    best
}

/// A row's HC_first, or "no flip observed up to 128K".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HcFirst(u32);

impl HcFirst {
    pub const NONE: HcFirst = HcFirst(u32::MAX);

    pub fn new(count: u32) -> Self {
        assert!(count != u32::MAX, "u32::MAX is reserved for the no-flip sentinel");
        HcFirst(count)
    }

    pub fn is_finite(self) -> bool {
        self.0 != u32::MAX
    }

    pub fn get(self) -> Option<u32> {
        self.is_finite().then_some(self.0)
    }

    /// Raw value; `u32::MAX` for the sentinel.
    pub fn raw(self) -> u32 {
        self.0
    }
}

impl fmt::Display for HcFirst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.get() {
            Some(v) => write!(f, "{v}"),
            None => f.write_str("inf"),
        }
    }
}

impl FromStr for HcFirst {
    type Err = std::num::ParseIntError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("inf") {
            Ok(HcFirst::NONE)
        } else {
            s.parse::<u32>().map(HcFirst)
        }
    }
}

impl Serialize for HcFirst {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HcFirst {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Aggressor on-time bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bucket {
    Ns36,
    Ns500,
    Us2,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Ns36, Bucket::Ns500, Bucket::Us2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn ns(self) -> f64 {
        match self {
            Bucket::Ns36 => 36.0,
            Bucket::Ns500 => 500.0,
            Bucket::Us2 => 2000.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Bucket::Ns36 => "36ns",
            Bucket::Ns500 => "500ns",
            Bucket::Us2 => "2us",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowVulnerability {
    /// HC_first per on-time bucket, indexed by [`Bucket::index`].
    pub hcfirst: [HcFirst; 3],
    pub ber_at_128k: f64,
    pub wcdp: DataPattern,
    pub bin_id: u8,
}

impl RowVulnerability {
    pub fn hcfirst(&self, bucket: Bucket) -> HcFirst {
        self.hcfirst[bucket.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VulnerabilityProfile {
    pub geometry: DeviceGeometry,
    pub rows: Vec<RowVulnerability>,
    pub seed: u64,
    pub template: Option<String>,
}

impl VulnerabilityProfile {
    pub fn index(&self, bank: usize, row: u32) -> usize {
        bank * self.geometry.rows_per_bank as usize + row as usize
    }

    pub fn row(&self, bank: usize, row: u32) -> &RowVulnerability {
        &self.rows[self.index(bank, row)]
    }

    pub fn row_mut(&mut self, bank: usize, row: u32) -> &mut RowVulnerability {
        let i = self.index(bank, row);
        &mut self.rows[i]
    }

    pub fn hcfirst(&self, bank: usize, row: u32, bucket: Bucket) -> HcFirst {
        self.row(bank, row).hcfirst(bucket)
    }

    pub fn banks(&self) -> usize {
        self.geometry.total_banks()
    }

    pub fn rows_per_bank(&self) -> u32 {
        self.geometry.rows_per_bank
    }

    /// Iterates `(bank, row, vulnerability)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, u32, &RowVulnerability)> {
        let rpb = self.geometry.rows_per_bank as usize;
        self.rows.iter().enumerate().map(move |(i, r)| (i / rpb, (i % rpb) as u32, r))
    }

    /// Smallest HC_first in `bucket` over all rows; `NONE` if no row flips.
    pub fn min_hcfirst(&self, bucket: Bucket) -> HcFirst {
        self.rows.iter().map(|r| r.hcfirst(bucket)).min().unwrap_or(HcFirst::NONE)
    }

    /// Largest finite HC_first in `bucket`.
    pub fn max_finite_hcfirst(&self, bucket: Bucket) -> Option<u32> {
        self.rows.iter().filter_map(|r| r.hcfirst(bucket).get()).max()
    }
}

/// Probability mass of a log-normal, truncated to `[support[0], support[n-1]]`,
/// over cells centred (geometrically) on each support point.
fn snapped_lognormal(support: &[f64], mu: f64, sigma: f64) -> Vec<f64> {
    let cdf = |x: f64| 0.5 * (1.0 + libm::erf((x.ln() - mu) / (sigma * std::f64::consts::SQRT_2)));
    let n = support.len();
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(support[0]);
    for w in support.windows(2) {
        edges.push((w[0] * w[1]).sqrt());
    }
    edges.push(support[n - 1]);
    let mut mass: Vec<f64> = edges.windows(2).map(|e| (cdf(e[1]) - cdf(e[0])).max(0.0)).collect();
    let total: f64 = mass.iter().sum();
    if total > 0.0 {
        mass.iter_mut().for_each(|m| *m /= total);
    } else {
        // all mass outside the window: collapse onto the nearer end
        let idx = if mu < support[0].ln() { 0 } else { n - 1 };
        mass.iter_mut().for_each(|m| *m = 0.0);
        mass[idx] = 1.0;
    }
    mass
}

fn support_points(min: u32, max: u32) -> Vec<u32> {
    let mut pts = vec![min];
    pts.extend(HAMMER_GRID.iter().copied().filter(|&g| g > min && g < max));
    if max > min {
        pts.push(max);
    }
    pts
}

/// Fits the log-normal location so that the snapped mean equals `avg`.
fn fit_location(support: &[f64], avg: f64, sigma: f64) -> f64 {
    let mean = |mu: f64| -> f64 {
        snapped_lognormal(support, mu, sigma).iter().zip(support).map(|(p, v)| p * v).sum()
    };
    let (mut lo, mut hi) = (support[0].ln() - 8.0 * sigma, support[support.len() - 1].ln() + 8.0 * sigma);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < avg {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Categorical distribution of HC_first values a template produces.
pub fn hcfirst_distribution(template: &ProfileTemplate) -> Vec<(u32, f64)> {
    let pts = support_points(template.hcfirst_min, template.hcfirst_max);
    if pts.len() == 1 {
        return vec![(pts[0], 1.0)];
    }
    let support: Vec<f64> = pts.iter().map(|&p| p as f64).collect();
    let sigma = (template.hcfirst_max as f64 / template.hcfirst_min as f64).ln() / 4.0;
    let mu = fit_location(&support, template.hcfirst_avg, sigma);
    pts.into_iter().zip(snapped_lognormal(&support, mu, sigma)).collect()
}

fn reduce(v: HcFirst, factor: f64, cap: HcFirst) -> HcFirst {
    let Some(v) = v.get() else { return HcFirst::NONE };
    let x = v as f64 * factor;
    let r = if x >= HAMMER_GRID[0] as f64 { snap_down_to_grid(x) } else { (x.floor() as u32).max(1) };
    HcFirst(r).min(cap)
}

/// Generates a profile shaped like `template`.
///
/// HC_first at 36ns follows a truncated log-normal between the template's
/// extremes, snapped to the hammer-count grid, with its location fitted so the
/// snapped mean matches the template average. The minimum and maximum are each
/// planted on one row. Longer on-times scale HC_first down by the template's
/// per-bucket factors. BER combines an optional periodic component, an
/// optional elevated chunk, and Gaussian noise, then is rescaled to the
/// template's mean and CV.
pub fn generate_profile(
    template: &ProfileTemplate,
    geometry: DeviceGeometry,
    seed: u64,
) -> Result<VulnerabilityProfile, ConfigError> {
    template.validate()?;
    geometry.validate()?;
    let n = geometry.total_rows();
    if template.hcfirst_min != template.hcfirst_max && n < 2 {
        return Err(ConfigError::Geometry(
            "need at least 2 rows to realize both min and max HC_first".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = hcfirst_distribution(template);
    let mut cumulative = Vec::with_capacity(dist.len());
    let mut acc = 0.0;
    for (_, p) in &dist {
        acc += p;
        cumulative.push(acc);
    }
    let mut base: Vec<u32> = (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let i = cumulative.partition_point(|&c| c <= u).min(dist.len() - 1);
            dist[i].0
        })
        .collect();
    if n >= 2 && template.hcfirst_min != template.hcfirst_max {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        base[a] = template.hcfirst_min;
        base[b] = template.hcfirst_max;
    }

    let ber = generate_ber(template, geometry, &mut rng);
    let rows = base
        .into_iter()
        .zip(ber)
        .map(|(hc, ber)| {
            let h36 = HcFirst(hc);
            let h500 = reduce(h36, template.taggon_reduction[0], h36);
            let h2 = reduce(h36, template.taggon_reduction[1], h500);
            RowVulnerability {
                hcfirst: [h36, h500, h2],
                ber_at_128k: ber,
                wcdp: DataPattern::ALL[rng.random_range(0..DataPattern::ALL.len())],
                bin_id: 0,
            }
        })
        .collect();
    Ok(VulnerabilityProfile { geometry, rows, seed, template: Some(template.name.clone()) })
}

fn generate_ber(template: &ProfileTemplate, geometry: DeviceGeometry, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = geometry.total_rows();
    let rpb = geometry.rows_per_bank as f64;
    let noise = Normal::new(0.0, 0.5).expect("valid sigma");
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let pos = (i % geometry.rows_per_bank as usize) as f64 / rpb;
            let mut v = 1.0 + noise.sample(rng);
            if let Some(period) = template.ber_period {
                // local minima at multiples of the period
                v += 1.0 - (2.0 * std::f64::consts::PI * pos / period).cos();
            }
            if let Some(c) = template.chunk_elevation {
                if pos >= c.start && pos < c.end {
                    v *= c.multiplier;
                }
            }
            v
        })
        .collect();
    let mean_raw = raw.iter().sum::<f64>() / n as f64;
    let std_raw = (raw.iter().map(|v| (v - mean_raw).powi(2)).sum::<f64>() / n as f64).sqrt();
    let target_std = template.ber_cv / 100.0 * template.ber_mean;
    raw.into_iter()
        .map(|v| {
            let dev = if std_raw > 0.0 { (v - mean_raw) / std_raw } else { 0.0 };
            (template.ber_mean + dev * target_std).clamp(0.0, 1.0)
        })
        .collect()
}

/// Scales every HC_first so the weakest 36ns value becomes `target_worst`.
///
/// Each finite value `v` maps to `max(1, floor(v * target / old_min))`; the
/// sentinel stays unbounded.
pub fn scale_profile(profile: &VulnerabilityProfile, target_worst: u32) -> VulnerabilityProfile {
    let mut out = profile.clone();
    let Some(old_min) = profile.min_hcfirst(Bucket::Ns36).get() else {
        return out;
    };
    let target = target_worst.max(1) as u64;
    for row in &mut out.rows {
        for h in &mut row.hcfirst {
            if let Some(v) = h.get() {
                *h = HcFirst(((v as u64 * target / old_min as u64).max(1)) as u32);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(rows: u32) -> DeviceGeometry {
        DeviceGeometry::desk(4, rows)
    }

    fn stats(p: &VulnerabilityProfile) -> (u32, f64, u32) {
        let v: Vec<u32> = p.rows.iter().map(|r| r.hcfirst[0].raw()).collect();
        let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        (*v.iter().min().unwrap(), mean, *v.iter().max().unwrap())
    }

    #[test]
    fn s0_extremes_and_mean() {
        let t = ProfileTemplate::preset("S0").unwrap();
        let p = generate_profile(&t, geom(1024), 7).unwrap();
        let (min, avg, max) = stats(&p);
        assert_eq!(min, 32 * 1024);
        assert_eq!(max, 128 * 1024);
        assert!((avg - t.hcfirst_avg).abs() / t.hcfirst_avg < 0.05, "avg {avg}");
    }

    #[test]
    fn m0_extremes_and_mean() {
        let t = ProfileTemplate::preset("M0").unwrap();
        let p = generate_profile(&t, geom(1024), 3).unwrap();
        let (min, avg, max) = stats(&p);
        assert_eq!((min, max), (8 * 1024, 40 * 1024));
        assert!((avg - t.hcfirst_avg).abs() / t.hcfirst_avg < 0.05, "avg {avg}");
    }

    #[test]
    fn degenerate_template_is_flat() {
        let t = ProfileTemplate::uniform(64 * 1024);
        let p = generate_profile(&t, geom(256), 1).unwrap();
        assert!(p.rows.iter().all(|r| r.hcfirst[0] == HcFirst(65536)));
    }

    #[test]
    fn values_on_grid_and_non_increasing() {
        let t = ProfileTemplate::preset("H1").unwrap();
        let p = generate_profile(&t, geom(512), 11).unwrap();
        for r in &p.rows {
            for h in r.hcfirst {
                assert!(HAMMER_GRID.contains(&h.raw()));
            }
            assert!(r.hcfirst[0] >= r.hcfirst[1] && r.hcfirst[1] >= r.hcfirst[2]);
            assert!(r.bin_id < 16);
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let t = ProfileTemplate::preset("S0").unwrap();
        let a = generate_profile(&t, geom(256), 5).unwrap();
        let b = generate_profile(&t, geom(256), 5).unwrap();
        let c = generate_profile(&t, geom(256), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn too_small_geometry() {
        let t = ProfileTemplate::preset("S0").unwrap();
        let g = DeviceGeometry::desk(1, 1);
        assert!(generate_profile(&t, g, 0).is_err());
    }

    #[test]
    fn scale_s0_to_64() {
        let t = ProfileTemplate::preset("S0").unwrap();
        let p = scale_profile(&generate_profile(&t, geom(256), 2).unwrap(), 64);
        let (min, _, max) = stats(&p);
        assert_eq!((min, max), (64, 256));
    }

    #[test]
    fn scale_h1_to_128() {
        let t = ProfileTemplate::preset("H1").unwrap();
        let p = scale_profile(&generate_profile(&t, geom(256), 2).unwrap(), 128);
        let (min, _, max) = stats(&p);
        assert_eq!((min, max), (128, 1365));
    }

    #[test]
    fn scale_to_current_min_is_identity() {
        let t = ProfileTemplate::preset("M0").unwrap();
        let p = generate_profile(&t, geom(128), 9).unwrap();
        assert_eq!(scale_profile(&p, 8 * 1024), p);
    }

    #[test]
    fn sentinel_round_trip() {
        assert_eq!("inf".parse::<HcFirst>().unwrap(), HcFirst::NONE);
        assert_eq!(HcFirst::new(12).to_string(), "12");
        assert!(!HcFirst::NONE.is_finite());
    }

    #[test]
    fn snapping() {
        assert_eq!(snap_down_to_grid(19.2 * 1024.0), 16384);
        assert_eq!(snap_down_to_grid(10.0), 1024);
        assert_eq!(snap_to_grid(57.0 * 1024.0), 57344);
    }
}
