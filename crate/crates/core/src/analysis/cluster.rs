use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scan::RowSignature;
use crate::dram::{Device, SubarrayLayout};
use crate::error::{AnalysisError, ConfigError};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit<const D: usize> {
    pub labels: Vec<usize>,
    pub centroids: Vec<[f64; D]>,
    pub inertia: f64,
}

fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Rescales every dimension to zero mean and unit variance. Constant
/// dimensions become zero.
pub fn standardize<const D: usize>(points: &[[f64; D]]) -> Vec<[f64; D]> {
    let n = points.len().max(1) as f64;
    let mut out = points.to_vec();
    for d in 0..D {
        let mean = points.iter().map(|p| p[d]).sum::<f64>() / n;
        let sd = (points.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / n).sqrt();
        for p in &mut out {
            p[d] = if sd > 0.0 { (p[d] - mean) / sd } else { 0.0 };
        }
    }
    out
}

fn plus_plus<const D: usize, R: Rng>(points: &[[f64; D]], k: usize, rng: &mut R) -> Vec<[f64; D]> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, w) in nearest.iter().enumerate() {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next];
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd<const D: usize>(points: &[[f64; D]], mut centroids: Vec<[f64; D]>, max_iter: usize) -> KMeansFit<D> {
    let k = centroids.len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| dist2(p, &centroids[a]).total_cmp(&dist2(p, &centroids[b])))
                .unwrap_or(0);
            changed |= labels[i] != best;
            labels[i] = best;
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; D]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for d in 0..D {
                sums[l][d] += p[d];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..D {
                    centroids[c][d] = sums[c][d] / counts[c] as f64;
                }
            } else {
                // Reseed an empty cluster at the point worst served by its centroid.
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        dist2(&points[a], &centroids[labels[a]]).total_cmp(&dist2(&points[b], &centroids[labels[b]]))
                    })
                    .unwrap_or(0);
                centroids[c] = points[far];
                labels[far] = c;
            }
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| dist2(p, &centroids[l])).sum();
    KMeansFit { labels, centroids, inertia }
}

/// Lloyd's k-means with k-means++ seeding; keeps the lowest-inertia fit
/// over `restarts` seedings.
pub fn kmeans<const D: usize, R: Rng>(points: &[[f64; D]], k: usize, restarts: usize, rng: &mut R) -> KMeansFit<D> {
    assert!(k >= 1 && k <= points.len(), "k must be in 1..=n");
    (0..restarts.max(1))
        .map(|_| lloyd(points, plus_plus(points, k, rng), 300))
        .min_by(|a, b| a.inertia.total_cmp(&b.inertia))
        .expect("at least one restart")
}

/// Mean silhouette coefficient. Points in singleton clusters score 0.
pub fn silhouette<const D: usize>(points: &[[f64; D]], labels: &[usize], k: usize) -> f64 {
    let n = points.len();
    if n == 0 {
        return 0.0;
    }
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    let mut total = 0.0;
    for i in 0..n {
        if sizes[labels[i]] <= 1 {
            continue;
        }
        let mut sum = vec![0.0; k];
        for j in 0..n {
            if i != j {
                sum[labels[j]] += dist2(&points[i], &points[j]).sqrt();
            }
        }
        let a = sum[labels[i]] / (sizes[labels[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && sizes[c] > 0)
            .map(|c| sum[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            let m = a.max(b);
            total += if m > 0.0 { (b - a) / m } else { 0.0 };
        }
    }
    total / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k_lo: usize,
    pub k_hi: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { k_lo: 2, k_hi: 256, restarts: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilhouettePoint {
    pub k: usize,
    pub score: f64,
}

/// Subarray boundaries proposed by clustering one bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutCandidate {
    pub bank: usize,
    pub rows: u32,
    /// Selected cluster count; `None` when too few one-sided rows to score.
    pub k: Option<usize>,
    pub boundaries: Vec<u32>,
    pub silhouette: Vec<SilhouettePoint>,
    pub low_confidence: bool,
}

impl LayoutCandidate {
    pub fn layout(&self) -> SubarrayLayout {
        let mut starts = vec![0];
        starts.extend(self.boundaries.iter().copied().filter(|&b| b > 0 && b < self.rows));
        SubarrayLayout { rows: self.rows, starts }
    }
}

/// Boundaries implied by one cluster of one-sided rows: between every
/// adjacent pair, or around a lone row when no pair exists.
fn cluster_boundaries(rows: &mut [u32], limit: u32, out: &mut Vec<u32>) {
    rows.sort_unstable();
    let before = out.len();
    out.extend(rows.windows(2).filter(|w| w[1] == w[0] + 1).map(|w| w[1]));
    if out.len() == before {
        let (lo, hi) = (rows[0], rows[rows.len() - 1] + 1);
        out.extend([lo, hi].into_iter().filter(|&b| b > 0 && b < limit));
    }
}

/// Clusters the one-sided rows of a bank over standardized (row address,
/// signature) and picks the cluster count with the best silhouette. Each
/// cluster should hold the two rows flanking one boundary.
///
/// The k range is clamped to what the point count supports.
pub fn cluster_subarrays(signatures: &[RowSignature], config: &ClusterConfig) -> Result<LayoutCandidate, AnalysisError> {
    if config.k_lo > config.k_hi || config.k_hi < 2 {
        return Err(AnalysisError::EmptyKRange { lo: config.k_lo, hi: config.k_hi });
    }
    let bank = signatures.first().map_or(0, |s| s.bank);
    let rows = signatures.len() as u32;
    let typical = signatures.iter().filter(|s| !s.bank_edge).map(|s| s.disturbed).max().unwrap_or(0);
    let odd: Vec<&RowSignature> = signatures.iter().filter(|s| !s.bank_edge && s.disturbed < typical).collect();
    let mut candidate = LayoutCandidate { bank, rows, k: None, boundaries: Vec::new(), silhouette: Vec::new(), low_confidence: true };
    if odd.len() < 3 {
        if !odd.is_empty() {
            let mut r: Vec<u32> = odd.iter().map(|s| s.row).collect();
            cluster_boundaries(&mut r, rows, &mut candidate.boundaries);
        }
        return Ok(candidate);
    }
    let raw: Vec<[f64; 2]> = odd.iter().map(|s| [s.row as f64, s.disturbed as f64]).collect();
    let points = standardize(&raw);
    let n = points.len();
    let (lo, hi) = (config.k_lo.clamp(2, n - 1), config.k_hi.min(n - 1));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for k in lo..=hi {
        let fit = kmeans(&points, k, config.restarts, &mut rng);
        let score = silhouette(&points, &fit.labels, k);
        candidate.silhouette.push(SilhouettePoint { k, score });
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, k, fit.labels));
        }
    }
    let (score, k, labels) = best.expect("non-empty k range");
    for c in 0..k {
        let mut members: Vec<u32> = odd.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(s, _)| s.row).collect();
        if !members.is_empty() {
            cluster_boundaries(&mut members, rows, &mut candidate.boundaries);
        }
    }
    candidate.boundaries.sort_unstable();
    candidate.boundaries.dedup();
    candidate.k = Some(k);
    candidate.low_confidence = score < 0.5;
    Ok(candidate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub layout: SubarrayLayout,
    pub removed: Vec<u32>,
}

/// Tries `attempts` RowClone copies across each candidate boundary. A copy
/// only succeeds inside one subarray, so any success disproves the
/// boundary; failures prove nothing and leave it in place.
pub fn rowclone_validate<R: Rng>(
    device: &Device,
    candidate: &LayoutCandidate,
    reliability: f64,
    attempts: u32,
    rng: &mut R,
) -> Result<Validation, AnalysisError> {
    if !(reliability > 0.0 && reliability <= 1.0) {
        return Err(ConfigError::Parameter(format!("clone reliability must be in (0, 1], got {reliability}")).into());
    }
    let mut starts = vec![0];
    let mut removed = Vec::new();
    for &b in candidate.layout().boundaries() {
        if (0..attempts).any(|_| device.row_clone(b - 1, b, reliability, rng)) {
            removed.push(b);
        } else {
            starts.push(b);
        }
    }
    Ok(Validation { layout: SubarrayLayout { rows: candidate.rows, starts }, removed })
}
