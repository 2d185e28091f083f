//! Generates a module profile, summarizes it and bins it for per-row thresholds.

use rowsim::dram::DeviceGeometry;
use rowsim::profile::{generate_profile, profile_stats, scale_profile, Bucket, ProfileTemplate};

fn main() -> anyhow::Result<()> {
    let template = ProfileTemplate::preset("S0").unwrap();
    let profile = generate_profile(&template, DeviceGeometry::desk(4, 8192), 1)?;
    let stats = profile_stats(&profile);
    println!("BER mean {:.4}, CV {:.2}%", stats.overall.ber_mean, stats.overall.ber_cv);
    for h in stats.histograms.iter().filter(|h| h.bucket == Bucket::Ns36) {
        for (hc, n) in h.counts.iter().filter(|c| c.1 > 0) {
            println!("  HC_first {hc:>6}: {n} rows");
        }
    }

    let scaled = scale_profile(&profile, 128);
    let (_, bins) = scaled.with_bins(16, Bucket::Us2)?;
    println!("worst row scaled to {}; {} bins:", scaled.min_hcfirst(Bucket::Ns36), bins.len());
    for b in 0..bins.len() as u8 {
        print!(" {}", bins.threshold(b));
    }
    println!();
    Ok(())
}
