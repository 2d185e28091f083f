//! Runs the double-sided hammer test loop on a small device and compares the
//! recovered HC_first with the profile it was generated from.

use rowsim::characterize::{test_loop, HammerTestConfig, Tester};
use rowsim::dram::{Device, DeviceGeometry, TimingParams};
use rowsim::profile::{generate_profile, Bucket, ProfileTemplate};

fn main() -> anyhow::Result<()> {
    let geometry = DeviceGeometry::desk(1, 64);
    let profile = generate_profile(&ProfileTemplate::preset("H1").unwrap(), geometry, 7)?;
    let mut tester = Tester::new(Device::new(geometry, TimingParams::default())?);
    let config = HammerTestConfig { iterations: 1, ..Default::default() };
    let dataset = test_loop(&mut tester, &profile, &config)?;

    let mut exact = 0;
    for rec in &dataset.records {
        let truth = profile.hcfirst(rec.bank, rec.row, Bucket::Ns36);
        exact += usize::from(rec.hcfirst[0] == Some(truth));
    }
    println!("{} of {} rows recovered exactly", exact, dataset.records.len());
    for rec in dataset.records.iter().take(5) {
        let hc: Vec<String> = rec.hcfirst.iter().map(|h| h.map_or("-".into(), |h| h.to_string())).collect();
        println!("row {:>3}: HC_first {} / {} / {}  wcdp {}", rec.row, hc[0], hc[1], hc[2], rec.wcdp);
    }
    Ok(())
}
