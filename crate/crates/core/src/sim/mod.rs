//! End-to-end runs: traces through the controller into the device, with
//! the disturbance oracle watching every activation and an optional
//! defense (fed baseline or per-row thresholds) acting on them.

mod controller;
mod metrics;
mod trace;

pub use controller::{ControllerConfig, Tally};
pub use metrics::{metrics, Metrics};
pub use trace::{gen_trace, AddressMapping, CoreTrace, Location, MappingScheme, Request, TraceKind, LINE_BYTES};

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::defenses::{DefenseConfig, DefenseContext, DefenseKind, DefenseStats};
use crate::dram::{Device, TimingParams};
use crate::error::{IoError, SimError};
use crate::oracle::FlipRecord;
use crate::profile::{HcFirst, VulnerabilityProfile};
use crate::svard::{attach, SvardConfig, SvardCounters, SvardState, SvardStorage, ThresholdSource, THRESHOLD_BUCKET};
use controller::Engine;

/// Per-core outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreReport {
    pub kind: String,
    pub requests: usize,
    pub t_shared: u64,
    pub t_alone: Option<u64>,
}

/// Bank time spent on defense work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtraTraffic {
    /// Preventive refresh, swap and migration activations.
    pub preventive_cycles: u64,
    /// Counter transfers.
    pub metadata_cycles: u64,
    /// Time requests spent held back by throttling.
    pub throttle_stall_cycles: u64,
}

/// Activations counted two independent ways: by the device (plus the
/// controller's metadata-row count) and by cause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActAttribution {
    pub device_acts: u64,
    pub device_ref_row_acts: u64,
    pub metadata_acts: u64,
    pub demand: u64,
    pub preventive: u64,
    pub metadata_requested: u64,
    pub refresh: u64,
}

impl ActAttribution {
    pub fn conserved(&self) -> bool {
        self.device_acts + self.device_ref_row_acts + self.metadata_acts
            == self.demand + self.preventive + self.metadata_requested + self.refresh
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub defense: Option<DefenseKind>,
    pub svard: Option<SvardStorage>,
    pub template: Option<String>,
    pub seed: u64,
    /// Worst-case threshold the baseline hands every activation.
    pub baseline_threshold: HcFirst,
    pub completed: bool,
    pub cycles: u64,
    pub cores: Vec<CoreReport>,
    pub metrics: Option<Metrics>,
    pub actions: DefenseStats,
    pub preventive_actions: u64,
    pub extra_traffic: ExtraTraffic,
    pub acts: ActAttribution,
    pub controller: Tally,
    pub svard_counters: SvardCounters,
    pub flips: Vec<FlipRecord>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<(), IoError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| IoError::io(path, e))
    }

    pub fn shared_times(&self) -> Vec<u64> {
        self.cores.iter().map(|c| c.t_shared).collect()
    }
}

/// Default run bound: two refresh windows.
pub fn default_max_cycles(timing: &TimingParams) -> u64 {
    2 * timing.in_cycles().refw
}

/// Everything a run needs besides the traces.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub timing: TimingParams,
    pub controller: ControllerConfig,
    pub profile: Arc<VulnerabilityProfile>,
    pub defense: Option<DefenseConfig>,
    /// Per-row thresholds; `None` runs the worst-case baseline.
    pub svard: Option<Arc<SvardConfig>>,
    pub seed: u64,
    pub max_cycles: u64,
}

impl Simulation {
    pub fn new(profile: Arc<VulnerabilityProfile>) -> Self {
        let timing = TimingParams::default();
        Simulation {
            timing,
            controller: ControllerConfig::default(),
            profile,
            defense: None,
            svard: None,
            seed: 0,
            max_cycles: default_max_cycles(&timing),
        }
    }

    pub fn with_defense(mut self, defense: Option<DefenseConfig>) -> Self {
        self.defense = defense;
        self
    }

    pub fn with_svard(mut self, svard: Option<Arc<SvardConfig>>) -> Self {
        self.svard = svard;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn mapping(&self) -> AddressMapping {
        AddressMapping::new(self.controller.mapping, &self.profile.geometry)
    }

    pub fn baseline_threshold(&self) -> HcFirst {
        self.profile.min_hcfirst(THRESHOLD_BUCKET)
    }

    /// Runs the traces together without computing solo baselines.
    pub fn run_shared(&self, traces: &[CoreTrace]) -> Result<SimReport, SimError> {
        if traces.is_empty() {
            return Err(SimError::Trace("at least one trace is required".into()));
        }
        let geometry = self.profile.geometry;
        let device = Device::new(geometry, self.timing)?;
        let adapted = match &self.defense {
            None => None,
            Some(cfg) => {
                let ctx = DefenseContext {
                    geometry,
                    timing: self.timing.in_cycles(),
                    base_threshold: self.baseline_threshold(),
                    seed: self.seed,
                };
                let source = match &self.svard {
                    Some(s) => ThresholdSource::Svard(SvardState::new(s.clone())),
                    None => ThresholdSource::baseline(&self.profile),
                };
                Some(attach(cfg.build(&ctx)?, source))
            }
        };
        let out = Engine::new(device, &self.profile, adapted, self.controller, traces).run(self.max_cycles)?;
        let actions = out.defense.unwrap_or_default();
        Ok(SimReport {
            defense: self.defense.as_ref().map(DefenseConfig::kind),
            svard: self.svard.as_ref().map(|s| s.storage),
            template: self.profile.template.clone(),
            seed: self.seed,
            baseline_threshold: self.baseline_threshold(),
            completed: out.completed,
            cycles: out.cycles,
            cores: traces
                .iter()
                .zip(&out.finish)
                .map(|(t, &f)| CoreReport {
                    kind: t.kind.name().to_string(),
                    requests: t.requests.len(),
                    t_shared: f,
                    t_alone: None,
                })
                .collect(),
            metrics: None,
            actions,
            preventive_actions: actions.preventive(),
            extra_traffic: ExtraTraffic {
                preventive_cycles: out.tally.preventive_cycles,
                metadata_cycles: out.tally.metadata_cycles,
                throttle_stall_cycles: out.tally.throttle_stall_cycles,
            },
            acts: ActAttribution {
                device_acts: out.device.acts,
                device_ref_row_acts: out.device.refresh_row_activations,
                metadata_acts: out.tally.metadata_acts,
                demand: out.tally.demand_acts,
                preventive: out.tally.preventive_acts,
                metadata_requested: actions.counter_transfers,
                refresh: out.tally.refresh_row_acts,
            },
            controller: out.tally,
            svard_counters: out.svard,
            flips: out.flips,
        })
    }

    /// Each trace run alone with no defense.
    pub fn solo_times(&self, traces: &[CoreTrace]) -> Result<Vec<u64>, SimError> {
        let solo = Simulation { defense: None, svard: None, ..self.clone() };
        traces
            .iter()
            .map(|t| Ok(solo.run_shared(std::slice::from_ref(t))?.cores[0].t_shared))
            .collect()
    }

    /// Shared run with metrics against the given solo times.
    pub fn run_against(&self, traces: &[CoreTrace], alone: &[u64]) -> Result<SimReport, SimError> {
        let mut report = self.run_shared(traces)?;
        report.metrics = Some(metrics(alone, &report.shared_times())?);
        for (c, &a) in report.cores.iter_mut().zip(alone) {
            c.t_alone = Some(a);
        }
        Ok(report)
    }

    /// Shared run plus solo baselines and metrics.
    pub fn run(&self, traces: &[CoreTrace]) -> Result<SimReport, SimError> {
        let alone = self.solo_times(traces)?;
        self.run_against(traces, &alone)
    }
}

fn default_length() -> usize {
    2000
}
fn default_bins() -> usize {
    16
}

/// One trace in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    pub generator: TraceKind,
    #[serde(default = "default_length")]
    pub length: usize,
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Run configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub timing: Option<TimingParams>,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub defense: Option<DefenseConfig>,
    #[serde(default = "default_bins")]
    pub svard_bins: usize,
    pub traces: Vec<TraceSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub max_cycles: Option<u64>,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Trace(format!("config: {e}")))
    }

    /// Generates the configured traces; unseeded traces derive a seed from
    /// the run seed and their position.
    pub fn build_traces(&self, sim: &Simulation) -> Result<Vec<CoreTrace>, SimError> {
        let mapping = sim.mapping();
        self.traces
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let seed = spec.seed.unwrap_or(self.seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
                let mut t = gen_trace(spec.generator, &mapping, &sim.profile.geometry, seed, spec.length)?;
                if let Some(w) = spec.window {
                    t.window = w.max(1);
                }
                Ok(t)
            })
            .collect()
    }
}

/// One line of a sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub defense: String,
    pub svard: String,
    pub template: String,
    pub scaled_hcfirst: u32,
    pub seed: u64,
    pub weighted_speedup: Option<f64>,
    pub harmonic_speedup: Option<f64>,
    pub max_slowdown: Option<f64>,
    pub preventive_actions: u64,
    pub flips: usize,
    pub cycles: u64,
}

impl SweepRow {
    pub fn from_report(report: &SimReport, scaled_hcfirst: u32) -> Self {
        SweepRow {
            defense: report.defense.map_or("none", DefenseKind::name).to_string(),
            svard: report.svard.map_or("off", SvardStorage::name).to_string(),
            template: report.template.clone().unwrap_or_default(),
            scaled_hcfirst,
            seed: report.seed,
            weighted_speedup: report.metrics.map(|m| m.weighted_speedup),
            harmonic_speedup: report.metrics.map(|m| m.harmonic_speedup),
            max_slowdown: report.metrics.map(|m| m.max_slowdown),
            preventive_actions: report.preventive_actions,
            flips: report.flips.len(),
            cycles: report.cycles,
        }
    }
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<(), IoError> {
    let file = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if rows.is_empty() {
        w.write_record([
            "defense",
            "svard",
            "template",
            "scaled_hcfirst",
            "seed",
            "weighted_speedup",
            "harmonic_speedup",
            "max_slowdown",
            "preventive_actions",
            "flips",
            "cycles",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| IoError::io(path, e))?;
    Ok(())
}
