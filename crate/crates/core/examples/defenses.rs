//! Drives each defense directly with a double-sided hammer and counts the
//! actions it takes.

use rowsim::defenses::{DefenseConfig, DefenseContext, DefenseKind};
use rowsim::dram::{DeviceGeometry, TimingParams};
use rowsim::profile::HcFirst;

fn main() -> anyhow::Result<()> {
    let threshold = HcFirst::new(1024);
    let ctx = DefenseContext {
        geometry: DeviceGeometry::desk(1, 8192),
        timing: TimingParams::default().in_cycles(),
        base_threshold: threshold,
        seed: 7,
    };
    for kind in DefenseKind::ALL {
        let mut defense = DefenseConfig::default_for(kind).build(&ctx)?;
        let mut actions = Vec::new();
        let mut deferred = 0;
        for i in 0..20_000u64 {
            let row = if i % 2 == 0 { 99 } else { 101 };
            let cycle = i * 60;
            if defense.gate(0, row, cycle, threshold).is_some() {
                deferred += 1;
                continue;
            }
            defense.on_activation(0, row, cycle, threshold, &mut actions);
        }
        println!("{:<12} {:>5} actions {:>6} deferred  {:?}", kind.name(), actions.len(), deferred, defense.stats());
    }
    Ok(())
}
