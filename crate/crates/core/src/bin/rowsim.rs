use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rowsim::analysis::{plant_correlation, run_pipeline, write_report, ClusterConfig, PipelineConfig, ReportInput, SpatialFeature};
use rowsim::defenses::{DefenseConfig, DefenseKind};
use rowsim::dram::{Device, DeviceGeometry, SubarrayLayout};
use rowsim::profile::{generate_profile, read_profile, scale_profile, write_profile, ProfileTemplate};
use rowsim::sim::{write_sweep_csv, SimConfig, Simulation, SweepRow};
use rowsim::svard::{SvardConfig, SvardStorage};

#[derive(Parser)]
#[command(name = "rowsim", version, about = "DRAM read-disturbance simulator and analysis toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic vulnerability profile and subarray layout.
    Profile {
        #[arg(long, default_value = "S0")]
        template: String,
        #[arg(long, default_value_t = 4)]
        banks: u32,
        #[arg(long, default_value_t = 8192)]
        rows: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Uniform subarray size; random sizes in [330, 1027] when omitted.
        #[arg(long)]
        subarray_size: Option<u32>,
        /// Make HC_first follow one feature bit, e.g. `subarray_bit_0`.
        #[arg(long)]
        plant: Option<SpatialFeature>,
        #[arg(long, default_value_t = 0.0)]
        plant_noise: f64,
        /// Output directory; gets profile.csv, its header and layout.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one trace-driven simulation.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        /// Overrides the config's defense; `none` disables it.
        #[arg(long)]
        defense: Option<String>,
        /// off, table or indram.
        #[arg(long, default_value = "off")]
        svard: String,
        /// Rescale the profile so its worst row flips at this count.
        #[arg(long)]
        hcfirst_scale: Option<u32>,
        #[arg(long)]
        out: PathBuf,
        /// Also write a one-line sweep summary here.
        #[arg(long)]
        sweep: Option<PathBuf>,
    },
    /// Recover subarrays and score spatial features on a profile directory.
    Analyze {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 8)]
        klo: usize,
        #[arg(long, default_value_t = 256)]
        khi: usize,
        #[arg(long, default_value_t = 0.7)]
        f1_threshold: f64,
        #[arg(long, default_value_t = 0.5)]
        clone_reliability: f64,
        #[arg(long, default_value_t = 8)]
        clone_attempts: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run directory; defaults to `<dataset>/analysis`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn profile_cmd(
    template: &str,
    geometry: DeviceGeometry,
    seed: u64,
    subarray_size: Option<u32>,
    plant: Option<(SpatialFeature, f64)>,
    out: &Path,
) -> Result<()> {
    let t = ProfileTemplate::preset(template).with_context(|| format!("unknown template {template}"))?;
    let mut profile = generate_profile(&t, geometry, seed)?;
    let rows = geometry.rows_per_bank;
    let layout = match subarray_size {
        Some(s) => SubarrayLayout::uniform(rows, s),
        None if rows >= 330 => SubarrayLayout::random(rows, 330, 1027, &mut ChaCha8Rng::seed_from_u64(seed)),
        None => SubarrayLayout::single(rows),
    };
    if let Some((feature, noise)) = plant {
        let (weak, strong) = (t.hcfirst_min, t.hcfirst_avg as u32);
        profile = plant_correlation(&profile, &layout, feature, weak, strong, noise, seed);
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_profile(&profile, &out.join("profile.csv"))?;
    std::fs::write(out.join("layout.json"), serde_json::to_string_pretty(&layout)? + "\n")?;
    println!("wrote {} rows and {} subarrays per bank to {}", profile.rows.len(), layout.starts.len(), out.display());
    Ok(())
}

fn simulate_cmd(
    config: &Path,
    profile: &Path,
    defense: Option<&str>,
    svard: &str,
    scale: Option<u32>,
    out: &Path,
    sweep: Option<&Path>,
) -> Result<()> {
    let cfg = SimConfig::from_json(&std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?)?;
    let mut prof = read_profile(profile)?;
    if let Some(s) = scale {
        prof = scale_profile(&prof, s);
    }
    let defense = match defense {
        None => cfg.defense.clone(),
        Some("none") => None,
        Some(name) => Some(DefenseConfig::default_for(name.parse::<DefenseKind>().map_err(anyhow::Error::msg)?)),
    };
    let svard = match SvardStorage::parse_flag(svard)? {
        Some(storage) => Some(Arc::new(SvardConfig::from_profile(&prof, cfg.svard_bins, storage)?)),
        None => None,
    };
    let mut sim = Simulation::new(Arc::new(prof)).with_defense(defense).with_svard(svard).with_seed(cfg.seed);
    sim.controller = cfg.controller;
    if let Some(t) = cfg.timing {
        sim.timing = t;
    }
    if let Some(m) = cfg.max_cycles {
        sim.max_cycles = m;
    }
    let traces = cfg.build_traces(&sim)?;
    let report = sim.run(&traces)?;
    report.write_json(out)?;
    if let Some(path) = sweep {
        let scaled = scale.or(sim.profile.min_hcfirst(rowsim::profile::Bucket::Ns36).get()).unwrap_or(0);
        write_sweep_csv(&[SweepRow::from_report(&report, scaled)], path)?;
    }
    println!(
        "{} cycles, {} preventive actions, {} flips -> {}",
        report.cycles,
        report.preventive_actions,
        report.flips.len(),
        out.display()
    );
    Ok(())
}

fn analyze_cmd(dataset: &Path, config: PipelineConfig, out: &Path) -> Result<()> {
    let profile = read_profile(&dataset.join("profile.csv"))?;
    let layout_path = dataset.join("layout.json");
    let layout: SubarrayLayout = if layout_path.exists() {
        read_json(&layout_path)?
    } else {
        SubarrayLayout::single(profile.rows_per_bank())
    };
    if layout.rows != profile.rows_per_bank() {
        bail!("layout covers {} rows but the profile has {} per bank", layout.rows, profile.rows_per_bank());
    }
    let device = Device::new(profile.geometry, Default::default())?.with_subarrays(layout);
    let outcome = run_pipeline(&device, &profile, &config)?;
    for b in &outcome.banks {
        println!(
            "bank {}: k = {:?}, {} subarrays, {} boundaries disproved{}",
            b.bank,
            b.candidate.k,
            b.validated.layout.starts.len(),
            b.validated.removed.len(),
            if b.candidate.low_confidence { " (low confidence)" } else { "" }
        );
    }
    for f in &outcome.f1.correlated {
        println!("correlated: {f}");
    }
    let input = ReportInput { profile: Some(profile), outcome: Some(outcome), sweep: Vec::new(), seed: config.seed };
    write_report(out, &input, Some(config))?;
    println!("report in {}", out.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Profile { template, banks, rows, seed, subarray_size, plant, plant_noise, out } => {
            profile_cmd(&template, DeviceGeometry::desk(banks, rows), seed, subarray_size, plant.map(|f| (f, plant_noise)), &out)
        }
        Command::Simulate { config, profile, defense, svard, hcfirst_scale, out, sweep } => {
            simulate_cmd(&config, &profile, defense.as_deref(), &svard, hcfirst_scale, &out, sweep.as_deref())
        }
        Command::Analyze { dataset, klo, khi, f1_threshold, clone_reliability, clone_attempts, seed, out } => {
            let config = PipelineConfig {
                cluster: ClusterConfig { k_lo: klo, k_hi: khi, seed, ..Default::default() },
                clone_reliability,
                clone_attempts,
                f1_threshold,
                seed,
            };
            let out = out.unwrap_or_else(|| dataset.join("analysis"));
            analyze_cmd(&dataset, config, &out)
        }
    }
}
