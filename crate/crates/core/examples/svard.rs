//! Compares the uniform worst-case threshold with the per-row thresholds a
//! defense sees once rows are binned by vulnerability.

use rowsim::dram::DeviceGeometry;
use rowsim::profile::{generate_profile, scale_profile, ProfileTemplate};
use rowsim::svard::{SvardConfig, SvardStorage, ThresholdSource};

fn main() -> anyhow::Result<()> {
    let profile = generate_profile(&ProfileTemplate::preset("M0").unwrap(), DeviceGeometry::desk(1, 8192), 3)?;
    let profile = scale_profile(&profile, 1024);
    let config = SvardConfig::from_profile(&profile, 16, SvardStorage::ControllerTable)?;

    let mut baseline = ThresholdSource::baseline(&profile);
    let mut per_row = ThresholdSource::Svard(rowsim::svard::SvardState::new(config.into()));
    let (mut sum_base, mut sum_row) = (0u64, 0u64);
    for row in 0..8192 {
        sum_base += baseline.threshold(0, row).raw() as u64;
        sum_row += per_row.threshold(0, row).raw() as u64;
    }
    println!("mean threshold: baseline {}, per-row {}", sum_base / 8192, sum_row / 8192);
    println!("lookups {:?}", per_row.counters());
    Ok(())
}
