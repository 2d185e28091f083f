use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cluster::{cluster_subarrays, rowclone_validate, ClusterConfig, LayoutCandidate, Validation};
use super::f1::{f1_report, F1Report, F1_THRESHOLD};
use super::scan::single_sided_scan;
use crate::dram::Device;
use crate::error::{AnalysisError, IoError};
use crate::profile::{profile_stats, VulnerabilityProfile};
use crate::sim::{write_sweep_csv, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub cluster: ClusterConfig,
    pub clone_reliability: f64,
    pub clone_attempts: u32,
    pub f1_threshold: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cluster: ClusterConfig::default(),
            clone_reliability: 0.5,
            clone_attempts: 8,
            f1_threshold: F1_THRESHOLD,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSubarrays {
    pub bank: usize,
    pub candidate: LayoutCandidate,
    pub validated: Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutcome {
    pub banks: Vec<BankSubarrays>,
    /// Scored against the layout recovered for bank 0.
    pub f1: F1Report,
}

/// Scan, cluster and validate every bank, then score spatial features
/// against the recovered layout.
pub fn run_pipeline(
    device: &Device,
    profile: &VulnerabilityProfile,
    config: &PipelineConfig,
) -> Result<AnalysisOutcome, AnalysisError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut banks = Vec::with_capacity(profile.banks());
    for bank in 0..profile.banks() {
        let signatures = single_sided_scan(device, profile, bank);
        let cluster = ClusterConfig { seed: config.cluster.seed ^ bank as u64, ..config.cluster };
        let candidate = cluster_subarrays(&signatures, &cluster)?;
        let validated = rowclone_validate(device, &candidate, config.clone_reliability, config.clone_attempts, &mut rng)?;
        banks.push(BankSubarrays { bank, candidate, validated });
    }
    let layout = banks.first().map(|b| b.validated.layout.clone());
    let layout = layout.unwrap_or_else(|| crate::dram::SubarrayLayout::single(profile.rows_per_bank()));
    let f1 = f1_report(profile, &layout, config.f1_threshold);
    Ok(AnalysisOutcome { banks, f1 })
}

/// Everything a report bundle can contain; absent parts give header-only files.
#[derive(Debug, Clone, Default)]
pub struct ReportInput {
    pub profile: Option<VulnerabilityProfile>,
    pub outcome: Option<AnalysisOutcome>,
    pub sweep: Vec<SweepRow>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub files: Vec<String>,
    pub config: Option<PipelineConfig>,
}

/// Files every bundle contains, in write order.
pub const REPORT_FILES: [&str; 7] = [
    "hcfirst_histogram.csv",
    "bank_summary.csv",
    "silhouette.csv",
    "subarrays.csv",
    "f1.csv",
    "sweep.csv",
    "analysis.json",
];

fn table<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<(), IoError> {
    let file = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

/// Writes the CSV tables, the full outcome as JSON and `manifest.json`
/// into `dir`, creating it if needed.
pub fn write_report(dir: &Path, input: &ReportInput, config: Option<PipelineConfig>) -> Result<Manifest, IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let at = |name: &str| -> PathBuf { dir.join(name) };
    let summary = input.profile.as_ref().map(profile_stats);

    let histogram = summary.iter().flat_map(|s| {
        s.histograms.iter().flat_map(|h| h.counts.iter().map(move |&(hc, n)| (h.bucket.label(), hc, n)))
    });
    table(&at(REPORT_FILES[0]), &["bucket", "hcfirst", "rows"], histogram)?;

    let banks = summary.iter().flat_map(|s| {
        s.per_bank.iter().map(|b| (b.bank, b.ber_mean, b.ber_cv, b.hcfirst_mean, b.hcfirst_cv))
    });
    table(&at(REPORT_FILES[1]), &["bank", "ber_mean", "ber_cv", "hcfirst_mean", "hcfirst_cv"], banks)?;

    let outcome_banks = input.outcome.iter().flat_map(|o| o.banks.iter());
    let curve = outcome_banks.clone().flat_map(|b| b.candidate.silhouette.iter().map(move |p| (b.bank, p.k, p.score)));
    table(&at(REPORT_FILES[2]), &["bank", "k", "silhouette"], curve)?;

    let subarrays = outcome_banks.flat_map(|b| {
        let l = &b.validated.layout;
        l.starts.iter().zip(l.sizes()).enumerate().map(move |(i, (&start, size))| (b.bank, i, start, size))
    });
    table(&at(REPORT_FILES[3]), &["bank", "subarray", "start", "size"], subarrays)?;

    let threshold = input.outcome.as_ref().map_or(F1_THRESHOLD, |o| o.f1.threshold);
    let f1 = input.outcome.iter().flat_map(|o| o.f1.scores.iter().map(|s| (s.feature, s.f1, s.f1 > threshold)));
    table(&at(REPORT_FILES[4]), &["feature", "f1", "correlated"], f1)?;

    write_sweep_csv(&input.sweep, &at(REPORT_FILES[5]))?;

    let json = serde_json::to_string_pretty(&input.outcome)?;
    std::fs::write(at(REPORT_FILES[6]), json + "\n").map_err(|e| IoError::io(at(REPORT_FILES[6]), e))?;

    let manifest = Manifest { seed: input.seed, files: REPORT_FILES.iter().map(|s| s.to_string()).collect(), config };
    let path = at("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| IoError::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::SpatialFeature;
    use crate::dram::{DeviceGeometry, SubarrayLayout, TimingParams};
    use crate::profile::{generate_profile, ProfileTemplate};

    fn read(dir: &Path, name: &str) -> String {
        std::fs::read_to_string(dir.join(name)).unwrap()
    }

    #[test]
    fn empty_input_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &ReportInput::default(), None).unwrap();
        for name in &REPORT_FILES[..6] {
            assert_eq!(read(dir.path(), name).lines().count(), 1, "{name}");
        }
        assert_eq!(read(dir.path(), "analysis.json").trim(), "null");
        let m: Manifest = serde_json::from_str(&read(dir.path(), "manifest.json")).unwrap();
        assert_eq!(m.files.len(), REPORT_FILES.len());
    }

    #[test]
    fn one_bank_summary_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = generate_profile(&ProfileTemplate::preset("S0").unwrap(), DeviceGeometry::desk(1, 64), 1).unwrap();
        write_report(dir.path(), &ReportInput { profile: Some(p.clone()), ..Default::default() }, None).unwrap();
        let mut r = csv::Reader::from_path(dir.path().join("bank_summary.csv")).unwrap();
        let rows: Vec<(usize, f64, f64, f64, f64)> = r.deserialize().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0], {
            let b = &profile_stats(&p).per_bank[0];
            (0, b.ber_mean, b.ber_cv, b.hcfirst_mean, b.hcfirst_cv)
        });
    }

    #[test]
    fn pipeline_bundle_is_byte_stable() {
        let geom = DeviceGeometry::desk(2, 2048);
        let truth = SubarrayLayout::uniform(2048, 512);
        let dev = Device::new(geom, TimingParams::default()).unwrap().with_subarrays(truth.clone());
        let p = generate_profile(&ProfileTemplate::preset("S0").unwrap(), geom, 5).unwrap();
        let cfg = PipelineConfig { seed: 4, ..Default::default() };
        let bundle = |dir: &Path| {
            let outcome = run_pipeline(&dev, &p, &cfg).unwrap();
            write_report(dir, &ReportInput { profile: Some(p.clone()), outcome: Some(outcome), sweep: vec![], seed: 4 }, Some(cfg))
                .unwrap()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        bundle(a.path());
        bundle(b.path());
        for name in REPORT_FILES.iter().chain(["manifest.json"].iter()) {
            assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
        }
        let outcome = run_pipeline(&dev, &p, &cfg).unwrap();
        assert!(outcome.banks.iter().all(|b| b.validated.layout == truth));
        assert!(outcome.f1.scores.iter().any(|s| s.feature == SpatialFeature::SubarrayBit(0)));
    }
}
