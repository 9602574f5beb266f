//! Run configuration files: sectioned key-value TOML with explicit
//! types. Unknown keys are rejected so a misspelled fault experiment
//! cannot silently pass as a fault-free one.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use ftpads_core::engine::{
    derived_seed, MigrationSettings, PlacementPolicy, SimulationConfig,
};
use ftpads_core::faults::{ByzantineBehavior, ByzantineMode, FailureEvent, FailureSchedule, FaultKind};
use ftpads_core::p2p::{LatencyModel, P2pParams};
use ftpads_core::{FailureModel, LpId, Timestep};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub sim: SimSection,
    pub failure_model: FailureModelSection,
    #[serde(default)]
    pub fault: Vec<FaultSection>,
    #[serde(default)]
    pub migration: MigrationSection,
    #[serde(default)]
    pub p2p: P2pSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub lps: u32,
    pub entities: u32,
    pub total_steps: u64,
    pub master_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_true")]
    pub enforce_constraint: bool,
    #[serde(default)]
    pub placement: PlacementKind,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementKind {
    #[default]
    UniformRandom,
    RoundRobin,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureModelSection {
    pub kind: ModelKindArg,
    pub tolerated_faults: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKindArg {
    Crash,
    Byzantine,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSection {
    pub lp: u32,
    /// Defaults to the run midpoint.
    pub step: Option<u64>,
    pub kind: FaultKindArg,
    #[serde(default)]
    pub mode: ByzantineModeArg,
    /// Corruption probability for `corrupt_with_prob`.
    pub prob: Option<f64>,
    /// Defaults to a stream derived from the master seed and the LP id.
    pub rng_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKindArg {
    Crash,
    Byzantine,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByzantineModeArg {
    #[default]
    CorruptAll,
    CorruptWithProb,
    Silent,
    GarbagePayloads,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MigrationSection {
    pub enabled: bool,
    pub window_steps: u64,
    pub dominance_threshold: f64,
    pub load_cap: f64,
}

impl Default for MigrationSection {
    fn default() -> Self {
        let d = MigrationSettings::default();
        MigrationSection {
            enabled: d.enabled,
            window_steps: d.window_steps,
            dominance_threshold: d.dominance_threshold,
            load_cap: d.load_cap,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct P2pSection {
    pub out_degree: u32,
    pub ping_period: u64,
    pub neighbor_prob: f64,
    pub latency_mu: f64,
    pub latency_sigma: f64,
    pub step_quantum: f64,
    pub refresh_period: u64,
}

impl Default for P2pSection {
    fn default() -> Self {
        let d = P2pParams::default();
        P2pSection {
            out_degree: d.out_degree,
            ping_period: d.ping_period,
            neighbor_prob: d.neighbor_prob,
            latency_mu: d.latency.mu,
            latency_sigma: d.latency.sigma,
            step_quantum: d.latency.step_quantum,
            refresh_period: d.refresh_period,
        }
    }
}

fn default_workers() -> usize {
    1
}

fn default_true() -> bool {
    true
}

/// A fully resolved run: everything the engine and the model need.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub sim: SimulationConfig,
    pub p2p: P2pParams,
    pub schedule: FailureSchedule,
}

impl LoadedRun {
    pub fn fault_count(&self) -> usize {
        self.schedule.len()
    }
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let file: RunConfigFile = toml::from_str(&text)
            .with_context(|| format!("invalid config file {}", path.display()))?;
        Ok(file)
    }

    pub fn failure_model(&self) -> FailureModel {
        match self.failure_model.kind {
            ModelKindArg::Crash => FailureModel::CrashTolerant {
                tolerated_faults: self.failure_model.tolerated_faults,
            },
            ModelKindArg::Byzantine => FailureModel::ByzantineTolerant {
                tolerated_faults: self.failure_model.tolerated_faults,
            },
        }
    }

    pub fn p2p_params(&self) -> P2pParams {
        P2pParams {
            out_degree: self.p2p.out_degree,
            ping_period: self.p2p.ping_period,
            neighbor_prob: self.p2p.neighbor_prob,
            latency: LatencyModel {
                mu: self.p2p.latency_mu,
                sigma: self.p2p.latency_sigma,
                step_quantum: self.p2p.step_quantum,
            },
            refresh_period: self.p2p.refresh_period,
        }
    }

    /// Resolve into engine inputs, applying optional seed and worker
    /// overrides from the command line.
    pub fn resolve(&self, seed_override: Option<u64>, workers_override: Option<usize>) -> Result<LoadedRun> {
        let master_seed = seed_override.unwrap_or(self.sim.master_seed);
        let mut sim = SimulationConfig::new(
            self.sim.lps,
            self.sim.entities,
            self.failure_model(),
            self.sim.total_steps,
            master_seed,
        );
        sim.workers = workers_override.unwrap_or(self.sim.workers);
        sim.enforce_constraint = self.sim.enforce_constraint;
        sim.placement = match self.sim.placement {
            PlacementKind::UniformRandom => PlacementPolicy::UniformRandom,
            PlacementKind::RoundRobin => PlacementPolicy::RoundRobin,
        };
        sim.migration = MigrationSettings {
            enabled: self.migration.enabled,
            window_steps: self.migration.window_steps,
            dominance_threshold: self.migration.dominance_threshold,
            load_cap: self.migration.load_cap,
        };

        if self.p2p.out_degree == 0 || self.p2p.out_degree >= self.sim.entities {
            bail!(
                "p2p.out_degree = {} must be in [1, entities) with entities = {}",
                self.p2p.out_degree,
                self.sim.entities
            );
        }

        let schedule = self.schedule(master_seed)?;
        Ok(LoadedRun { sim, p2p: self.p2p_params(), schedule })
    }

    fn schedule(&self, master_seed: u64) -> Result<FailureSchedule> {
        let midpoint = self.sim.total_steps / 2;
        let events = self
            .fault
            .iter()
            .map(|f| self.fault_event(f, midpoint, master_seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(FailureSchedule::new(events)?)
    }

    fn fault_event(&self, f: &FaultSection, midpoint: u64, master_seed: u64) -> Result<FailureEvent> {
        let step = Timestep(f.step.unwrap_or(midpoint));
        let kind = match f.kind {
            FaultKindArg::Crash => FaultKind::Crash,
            FaultKindArg::Byzantine => {
                let mode = match f.mode {
                    ByzantineModeArg::CorruptAll => ByzantineMode::CorruptAll,
                    ByzantineModeArg::Silent => ByzantineMode::Silent,
                    ByzantineModeArg::GarbagePayloads => ByzantineMode::GarbagePayloads,
                    ByzantineModeArg::CorruptWithProb => {
                        let p = f.prob.with_context(|| {
                            format!("fault on lp {} uses corrupt_with_prob but sets no prob", f.lp)
                        })?;
                        ByzantineMode::CorruptWithProb(p)
                    }
                };
                let seed = f
                    .rng_seed
                    .unwrap_or_else(|| derived_seed(master_seed, BYZ_FAULT_DOMAIN + u64::from(f.lp)));
                FaultKind::TurnByzantine(ByzantineBehavior::new(mode, seed))
            }
        };
        Ok(FailureEvent { lp: LpId(f.lp), step, kind })
    }

    /// Replace the file's schedule with `count` generated events of the
    /// run's fault kind, all at the midpoint step on LPs 0..count. Used
    /// by the `faults` sweep axis.
    pub fn generated_schedule(&self, count: u32, master_seed: u64) -> Result<FailureSchedule> {
        let midpoint = self.sim.total_steps / 2;
        let events = (0..count)
            .map(|lp| {
                let kind = match self.failure_model.kind {
                    ModelKindArg::Crash => FaultKind::Crash,
                    ModelKindArg::Byzantine => FaultKind::TurnByzantine(ByzantineBehavior::new(
                        ByzantineMode::CorruptAll,
                        derived_seed(master_seed, BYZ_FAULT_DOMAIN + u64::from(lp)),
                    )),
                };
                FailureEvent { lp: LpId(lp), step: Timestep(midpoint), kind }
            })
            .collect();
        Ok(FailureSchedule::new(events)?)
    }
}

const BYZ_FAULT_DOMAIN: u64 = 0xFA17;
