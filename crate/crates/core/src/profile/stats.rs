use serde::Serialize;

use super::{Bucket, VulnerabilityProfile, HAMMER_GRID};

/// Population coefficient of variation, in percent. Zero for empty or
/// zero-mean inputs.
pub fn cv_percent(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    100.0 * var.sqrt() / mean
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BankStats {
    pub bank: usize,
    pub ber_mean: f64,
    pub ber_cv: f64,
    pub hcfirst_mean: f64,
    pub hcfirst_cv: f64,
}

/// Row counts per grid value for one on-time bucket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridHistogram {
    pub bucket: Bucket,
    pub counts: Vec<(u32, u64)>,
    pub none_observed: u64,
    pub off_grid: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileSummary {
    pub per_bank: Vec<BankStats>,
    /// CV over all rows of all banks.
    pub overall: BankStats,
    /// CV of the per-bank mean BER.
    pub cross_bank_ber_cv: f64,
    pub histograms: Vec<GridHistogram>,
    /// BER per row position averaged over banks, normalized to its minimum.
    pub normalized_ber: Vec<f64>,
}

fn bank_stats(bank: usize, ber: &[f64], hc: &[f64]) -> BankStats {
    BankStats {
        bank,
        ber_mean: mean(ber),
        ber_cv: cv_percent(ber),
        hcfirst_mean: mean(hc),
        hcfirst_cv: cv_percent(hc),
    }
}

/// Distribution summaries of a profile. HC_first statistics use the 36ns
/// bucket and skip rows without an observed flip.
pub fn profile_stats(profile: &VulnerabilityProfile) -> ProfileSummary {
    let banks = profile.banks();
    let rpb = profile.rows_per_bank() as usize;
    let mut per_bank = Vec::with_capacity(banks);
    let (mut all_ber, mut all_hc) = (Vec::new(), Vec::new());
    for b in 0..banks {
        let rows = &profile.rows[b * rpb..(b + 1) * rpb];
        let ber: Vec<f64> = rows.iter().map(|r| r.ber_at_128k).collect();
        let hc: Vec<f64> = rows.iter().filter_map(|r| r.hcfirst[0].get()).map(f64::from).collect();
        per_bank.push(bank_stats(b, &ber, &hc));
        all_ber.extend(ber);
        all_hc.extend(hc);
    }
    let bank_means: Vec<f64> = per_bank.iter().map(|s| s.ber_mean).collect();

    let histograms = Bucket::ALL
        .iter()
        .map(|&bucket| {
            let mut counts: Vec<(u32, u64)> = HAMMER_GRID.iter().map(|&g| (g, 0)).collect();
            let (mut none, mut off) = (0, 0);
            for r in &profile.rows {
                match r.hcfirst(bucket).get() {
                    None => none += 1,
                    Some(v) => match HAMMER_GRID.binary_search(&v) {
                        Ok(i) => counts[i].1 += 1,
                        Err(_) => off += 1,
                    },
                }
            }
            GridHistogram { bucket, counts, none_observed: none, off_grid: off }
        })
        .collect();

    let mut by_pos = vec![0.0; rpb];
    for b in 0..banks {
        for (i, r) in profile.rows[b * rpb..(b + 1) * rpb].iter().enumerate() {
            by_pos[i] += r.ber_at_128k / banks as f64;
        }
    }
    let min_pos = by_pos.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
    let normalized_ber = if min_pos.is_finite() {
        by_pos.iter().map(|v| v / min_pos).collect()
    } else {
        by_pos
    };

    ProfileSummary {
        per_bank,
        overall: bank_stats(usize::MAX, &all_ber, &all_hc),
        cross_bank_ber_cv: cv_percent(&bank_means),
        histograms,
        normalized_ber,
    }
}
