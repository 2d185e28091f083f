//! Runs an eight-core benign mix under RRS with and without per-row
//! thresholds and prints the system metrics.

use std::sync::Arc;

use rowsim::defenses::{DefenseConfig, DefenseKind};
use rowsim::dram::DeviceGeometry;
use rowsim::profile::{generate_profile, scale_profile, ProfileTemplate};
use rowsim::sim::{gen_trace, Simulation, TraceKind};
use rowsim::svard::{SvardConfig, SvardStorage};

fn main() -> anyhow::Result<()> {
    let profile = generate_profile(&ProfileTemplate::preset("S0").unwrap(), DeviceGeometry::desk(4, 8192), 1)?;
    let profile = Arc::new(scale_profile(&profile, 128));
    let svard = Arc::new(SvardConfig::from_profile(&profile, 16, SvardStorage::ControllerTable)?);
    let base = Simulation::new(profile.clone()).with_defense(Some(DefenseConfig::default_for(DefenseKind::Rrs)));
    let mapping = base.mapping();
    let traces = (0..8)
        .map(|i| gen_trace(TraceKind::benign(), &mapping, &profile.geometry, 100 + i, 3000))
        .collect::<Result<Vec<_>, _>>()?;

    for sim in [base.clone(), base.with_svard(Some(svard))] {
        let r = sim.run(&traces)?;
        let m = r.metrics.expect("solo baselines computed");
        println!(
            "svard {:<5} ws {:.3} hs {:.3} max slowdown {:.3}, {} preventive actions, {} flips",
            r.svard.map_or("off", |s| s.name()), m.weighted_speedup, m.harmonic_speedup, m.max_slowdown, r.preventive_actions, r.flips.len()
        );
    }
    Ok(())
}
