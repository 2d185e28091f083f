//! Recovers a hidden subarray layout from single-sided hammering, then
//! checks which spatial features predict HC_first.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rowsim::analysis::{plant_correlation, run_pipeline, PipelineConfig, SpatialFeature};
use rowsim::dram::{Device, DeviceGeometry, SubarrayLayout, TimingParams};
use rowsim::profile::{generate_profile, ProfileTemplate};

fn main() -> anyhow::Result<()> {
    let geometry = DeviceGeometry::desk(1, 8192);
    let truth = SubarrayLayout::random(8192, 330, 1027, &mut ChaCha8Rng::seed_from_u64(5));
    let device = Device::new(geometry, TimingParams::default())?.with_subarrays(truth.clone());
    let profile = generate_profile(&ProfileTemplate::preset("S0").unwrap(), geometry, 5)?;
    let profile = plant_correlation(&profile, &truth, SpatialFeature::SubarrayBit(0), 32768, 57344, 0.24, 5);

    let outcome = run_pipeline(&device, &profile, &PipelineConfig::default())?;
    let bank = &outcome.banks[0];
    println!("true sizes      {:?}", truth.sizes());
    println!("recovered sizes {:?}", bank.validated.layout.sizes());
    println!("k = {:?}, exact = {}", bank.candidate.k, bank.validated.layout == truth);
    for s in outcome.f1.scores.iter().filter(|s| s.f1 > 0.5) {
        println!("{:<16} F1 {:.3}", s.feature.to_string(), s.f1);
    }
    Ok(())
}
