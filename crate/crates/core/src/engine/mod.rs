//! The time-stepped simulation kernel.
//!
//! Each step runs four phases: fault events, message delivery plus
//! per-instance stepping (parallel across LPs), fan-out of the collected
//! sends at the barrier, and an optional migration window. All cross-LP
//! effects happen at the barrier in ascending LP order, which makes the
//! observable outcome independent of how many workers execute the LP
//! phase.

mod behavior;
mod events;

pub use behavior::{
    derived_seed, per_instance_rng_seed, seed_domain, EntityBehavior, EntityRng, OutboundSend,
};
pub use events::{CollectingSink, EventKind, EventSink, NullSink, SimEvent};

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::domain::{
    majority_threshold, Digest, DigestHasher, EntityId, FailureModel, InstanceId, LpId, Message,
    MessageKey, Timestep,
};
use crate::faults::{mangle, ByzantineBehavior, FailureSchedule, FaultKind, ScheduleError};
use crate::migration::{evaluate, InteractionTally, MigrationDecision, MigrationPolicy};
use crate::replication::{
    fan_out, place_instances, place_round_robin, FilterOutcome, LogicalSend, PlacementError,
    PlacementMap, VoteLedger,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("a run needs at least one LP")]
    NoLps,
    #[error("a run needs at least one entity")]
    NoEntities,
    #[error("workers must be at least 1")]
    NoWorkers,
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// How initial instance placement is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlacementPolicy {
    /// Per entity, a uniformly random subset of LPs (the analytical
    /// model's assumption).
    #[default]
    UniformRandom,
    /// Deterministic striping; evens out load, off by default.
    RoundRobin,
}

/// Migration (adaptive self-clustering) settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MigrationSettings {
    pub enabled: bool,
    /// Observation window length in steps.
    pub window_steps: u64,
    /// Migrate only when the top destination LP receives strictly more
    /// than this share of an instance's sends within the window.
    pub dominance_threshold: f64,
    /// No LP may exceed `load_cap * ceil(N*M/L)` hosted instances.
    pub load_cap: f64,
}

impl Default for MigrationSettings {
    fn default() -> Self {
        MigrationSettings {
            enabled: false,
            window_steps: 16,
            dominance_threshold: 0.5,
            load_cap: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub lps: u32,
    pub entities: u32,
    pub model: FailureModel,
    pub total_steps: u64,
    pub master_seed: u64,
    pub workers: usize,
    /// Keep sibling replicas on distinct LPs (the placement constraint).
    /// Disabling it reproduces the unconstrained placement regime.
    pub enforce_constraint: bool,
    pub placement: PlacementPolicy,
    pub migration: MigrationSettings,
}

impl SimulationConfig {
    pub fn new(
        lps: u32,
        entities: u32,
        model: FailureModel,
        total_steps: u64,
        master_seed: u64,
    ) -> Self {
        SimulationConfig {
            lps,
            entities,
            model,
            total_steps,
            master_seed,
            workers: 1,
            enforce_constraint: true,
            placement: PlacementPolicy::default(),
            migration: MigrationSettings::default(),
        }
    }
}

/// Message traffic totals for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct MessageCounts {
    /// Distinct logical sends that materialized (counted once per
    /// `MessageKey`, however many replicas emitted it).
    pub logical_sends: u64,
    /// Replicated copies actually sent (after Byzantine suppression).
    pub physical_sends: u64,
    /// Payloads handed to instances after filtering.
    pub delivered: u64,
    /// Copies dropped as redundant (already delivered, or repeated source
    /// replica).
    pub filtered_duplicates: u64,
    /// Deliveries that went through the majority vote.
    pub voted_deliveries: u64,
    /// Copies whose digest lost (or disagreed with) the vote.
    pub dropped_corrupt: u64,
}

/// Result of one run. Everything here is deterministic for a fixed
/// (config, behavior, schedule); wall-clock timing deliberately lives
/// outside.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub completed: bool,
    pub final_step: Timestep,
    /// Per entity, the digest of the surviving (crash model) or
    /// majority-agreed (Byzantine model) instance state. Entities with no
    /// surviving or agreed state are absent.
    pub entity_digests: BTreeMap<EntityId, Digest>,
    pub msg_counts: MessageCounts,
    pub migrations: u64,
}

impl RunReport {
    /// Single digest summarizing all per-entity digests; the value the
    /// CLI reports and determinism checks compare.
    pub fn combined_digest(&self) -> Digest {
        let mut h = DigestHasher::new();
        for (entity, d) in &self.entity_digests {
            h.update_u32(entity.0);
            h.update(d.as_bytes());
        }
        h.finalize()
    }
}

/// Sort a delivery batch into the canonical order: destination instance,
/// then message key, then source replica. Stable across runs and across
/// any physical arrival interleaving.
pub fn delivery_order(messages: &mut [Message]) {
    messages.sort_by_key(|m| (m.dst, m.key(), m.src.replica));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LpStatus {
    Running,
    Crashed,
    Byzantine,
}

struct InstanceRuntime<S> {
    state: S,
    rng: EntityRng,
    /// Run-long logical sequence counter per destination entity.
    seq_counters: HashMap<EntityId, u64>,
    ledger: VoteLedger,
}

struct Lp<S> {
    id: LpId,
    status: LpStatus,
    instances: BTreeMap<InstanceId, InstanceRuntime<S>>,
    /// Pending messages bucketed by delivery step.
    inbox: BTreeMap<Timestep, Vec<Message>>,
}

struct ByzantineRuntime {
    behavior: ByzantineBehavior,
    rng: ChaCha8Rng,
}

#[derive(Default)]
struct LpStepOutput {
    emissions: Vec<LogicalSend>,
    events: Vec<SimEvent>,
    delivered: u64,
    filtered_duplicates: u64,
    voted_deliveries: u64,
    dropped_corrupt: u64,
}

/// A fully set-up run. Consumed by [`Simulation::run`].
pub struct Simulation<B: EntityBehavior> {
    config: SimulationConfig,
    behavior: B,
    schedule: FailureSchedule,
    m: u32,
    placement: PlacementMap,
    lps: Vec<Lp<B::State>>,
    byzantine: Vec<Option<ByzantineRuntime>>,
    tally: InteractionTally,
    counts: MessageCounts,
    migrations: u64,
    deliveries_wanted: bool,
}

impl<B: EntityBehavior> Simulation<B> {
    pub fn new(
        config: SimulationConfig,
        behavior: B,
        schedule: FailureSchedule,
    ) -> Result<Self, ConfigError> {
        if config.lps == 0 {
            return Err(ConfigError::NoLps);
        }
        if config.entities == 0 {
            return Err(ConfigError::NoEntities);
        }
        if config.workers == 0 {
            return Err(ConfigError::NoWorkers);
        }
        let m = config.model.replication_degree();
        if m > config.lps {
            return Err(PlacementError::ReplicationExceedsLps { m, l: config.lps }.into());
        }
        schedule.validate_for(config.lps)?;

        let placement = match config.placement {
            PlacementPolicy::UniformRandom => {
                let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(
                    config.master_seed,
                    seed_domain::PLACEMENT,
                ));
                place_instances(config.entities, m, config.lps, &mut rng, config.enforce_constraint)?
            }
            PlacementPolicy::RoundRobin => place_round_robin(config.entities, m, config.lps)?,
        };

        let mut lps: Vec<Lp<B::State>> = (0..config.lps)
            .map(|i| Lp {
                id: LpId(i),
                status: LpStatus::Running,
                instances: BTreeMap::new(),
                inbox: BTreeMap::new(),
            })
            .collect();
        for (inst, lp) in placement.iter() {
            let seed = per_instance_rng_seed(config.master_seed, inst.entity);
            let runtime = InstanceRuntime {
                state: behavior.on_init(inst.entity, seed),
                rng: EntityRng::seed_from_u64(seed),
                seq_counters: HashMap::new(),
                ledger: VoteLedger::new(),
            };
            lps[lp.0 as usize].instances.insert(inst, runtime);
        }

        let tally = InteractionTally::new(config.entities, m, config.lps);
        Ok(Simulation {
            byzantine: (0..config.lps).map(|_| None).collect(),
            config,
            behavior,
            schedule,
            m,
            placement,
            lps,
            tally,
            counts: MessageCounts::default(),
            migrations: 0,
            deliveries_wanted: false,
        })
    }

    /// Execute all steps and produce the report. Events go to `sink` in a
    /// deterministic order.
    pub fn run(mut self, sink: &mut dyn EventSink) -> RunReport {
        self.deliveries_wanted = sink.wants_deliveries();
        for step in 0..self.config.total_steps {
            let t = Timestep(step);
            self.apply_faults(t, sink);
            let outputs = self.lp_phase(t);
            self.barrier_phase(t, outputs, sink);
            self.migration_window(t, sink);
        }
        self.finish(sink)
    }

    /// Convenience: run without event reporting.
    pub fn run_quiet(self) -> RunReport {
        let mut sink = NullSink;
        self.run(&mut sink)
    }

    fn apply_faults(&mut self, t: Timestep, sink: &mut dyn EventSink) {
        let due: Vec<_> = self.schedule.due_at(t).cloned().collect();
        for event in due {
            let lp = &mut self.lps[event.lp.0 as usize];
            debug_assert_eq!(lp.status, LpStatus::Running, "one event per LP, transitions are permanent");
            match event.kind {
                FaultKind::Crash => {
                    lp.status = LpStatus::Crashed;
                    // Local state and queued input are lost with the LP.
                    lp.instances.clear();
                    lp.inbox.clear();
                    sink.record(SimEvent {
                        step: t.0,
                        lp: Some(event.lp.0),
                        kind: EventKind::LpCrashed,
                    });
                }
                FaultKind::TurnByzantine(behavior) => {
                    lp.status = LpStatus::Byzantine;
                    self.byzantine[event.lp.0 as usize] = Some(ByzantineRuntime {
                        behavior,
                        rng: ChaCha8Rng::seed_from_u64(behavior.rng_seed),
                    });
                    sink.record(SimEvent {
                        step: t.0,
                        lp: Some(event.lp.0),
                        kind: EventKind::LpTurnedByzantine {
                            mode: format!("{:?}", behavior.mode),
                        },
                    });
                }
            }
        }
    }

    /// Deliver due messages and step every hosted instance, concurrently
    /// across LPs when configured. Outputs come back in LP id order no
    /// matter the worker count.
    fn lp_phase(&mut self, t: Timestep) -> Vec<LpStepOutput> {
        let byz_model = self.config.model.is_byzantine();
        let m = self.m;
        let want_events = self.deliveries_wanted;
        let behavior = &self.behavior;
        let workers = self.config.workers.min(self.lps.len()).max(1);
        if workers == 1 {
            // Single-threaded reference mode.
            self.lps
                .iter_mut()
                .map(|lp| process_lp(lp, t, behavior, byz_model, m, want_events))
                .collect()
        } else {
            let chunk = self.lps.len().div_ceil(workers);
            std::thread::scope(|scope| {
                let handles: Vec<_> = self
                    .lps
                    .chunks_mut(chunk)
                    .map(|lp_chunk| {
                        scope.spawn(move || {
                            lp_chunk
                                .iter_mut()
                                .map(|lp| process_lp(lp, t, behavior, byz_model, m, want_events))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("LP worker panicked"))
                    .collect()
            })
        }
    }

    /// Merge per-LP outputs at the barrier: replicate every logical send
    /// into its M copies, apply the sender's Byzantine behavior, count,
    /// and route copies into destination inboxes.
    fn barrier_phase(&mut self, t: Timestep, outputs: Vec<LpStepOutput>, sink: &mut dyn EventSink) {
        let mut step_keys: HashSet<MessageKey> = HashSet::new();
        let migration_on = self.config.migration.enabled;
        for (lp_idx, output) in outputs.into_iter().enumerate() {
            for event in output.events {
                sink.record(event);
            }
            self.counts.delivered += output.delivered;
            self.counts.filtered_duplicates += output.filtered_duplicates;
            self.counts.voted_deliveries += output.voted_deliveries;
            self.counts.dropped_corrupt += output.dropped_corrupt;

            let byz = &mut self.byzantine[lp_idx];
            for send in output.emissions {
                debug_assert_eq!(send.send_step, t);
                if step_keys.insert(send.key()) {
                    self.counts.logical_sends += 1;
                }
                for copy in fan_out(&send, self.m) {
                    let original_digest = copy.digest;
                    let copy = match byz {
                        Some(rt) => match mangle(&rt.behavior, copy, &mut rt.rng) {
                            Some(c) => c,
                            None => continue,
                        },
                        None => copy,
                    };
                    if self.deliveries_wanted && copy.digest != original_digest {
                        sink.record(SimEvent {
                            step: t.0,
                            lp: Some(lp_idx as u32),
                            kind: EventKind::CorruptedCopy {
                                src_entity: copy.src.entity.0,
                                src_replica: copy.src.replica,
                                dst_entity: copy.dst.entity.0,
                                dst_replica: copy.dst.replica,
                                seq: copy.seq,
                                deliver_step: copy.deliver_step.0,
                                digest: copy.digest.to_hex(),
                            },
                        });
                    }
                    self.counts.physical_sends += 1;
                    let dst_lp = self.placement.lp_of(copy.dst);
                    if migration_on {
                        self.tally.record(send.src, dst_lp);
                    }
                    let dst = &mut self.lps[dst_lp.0 as usize];
                    if dst.status != LpStatus::Crashed {
                        dst.inbox.entry(copy.deliver_step).or_default().push(copy);
                    }
                }
            }
        }
    }

    fn migration_window(&mut self, t: Timestep, sink: &mut dyn EventSink) {
        let settings = self.config.migration;
        if !settings.enabled || settings.window_steps == 0 {
            return;
        }
        if !(t.0 + 1).is_multiple_of(settings.window_steps) {
            return;
        }
        let policy = MigrationPolicy {
            dominance_threshold: settings.dominance_threshold,
            load_cap: settings.load_cap,
        };
        let running: Vec<bool> =
            self.lps.iter().map(|lp| lp.status == LpStatus::Running).collect();
        let decisions = evaluate(&self.tally, &self.placement, &policy, &running);
        for decision in &decisions {
            self.commit_migration(decision, t, sink);
        }
        self.tally.reset();

        // The constraint must survive every window. Skipped when the run
        // deliberately started from unconstrained placement.
        let constraint_ok = if self.config.enforce_constraint {
            self.placement.validate_constraint().is_ok()
        } else {
            true
        };
        sink.record(SimEvent {
            step: t.0,
            lp: None,
            kind: EventKind::MigrationWindow {
                decisions: decisions.len() as u64,
                constraint_ok,
            },
        });
        assert!(constraint_ok, "placement constraint violated after migration window at step {t}");
    }

    /// Move one instance: runtime state, filtering state and pending
    /// inbox messages all travel to the destination LP before the next
    /// delivery phase.
    fn commit_migration(
        &mut self,
        decision: &MigrationDecision,
        t: Timestep,
        sink: &mut dyn EventSink,
    ) {
        let MigrationDecision { instance, from, to } = *decision;
        debug_assert_ne!(from, to);
        let runtime = self.lps[from.0 as usize]
            .instances
            .remove(&instance)
            .expect("migration source hosts the instance");
        let mut pending: Vec<Message> = Vec::new();
        for bucket in self.lps[from.0 as usize].inbox.values_mut() {
            let mut i = 0;
            while i < bucket.len() {
                if bucket[i].dst == instance {
                    pending.push(bucket.remove(i));
                } else {
                    i += 1;
                }
            }
        }
        let dst = &mut self.lps[to.0 as usize];
        debug_assert_eq!(dst.status, LpStatus::Running);
        dst.instances.insert(instance, runtime);
        for msg in pending {
            dst.inbox.entry(msg.deliver_step).or_default().push(msg);
        }
        self.placement.reassign(instance, to);
        self.migrations += 1;
        sink.record(SimEvent {
            step: t.0,
            lp: Some(from.0),
            kind: EventKind::MigrationCommitted {
                entity: instance.entity.0,
                replica: instance.replica,
                from: from.0,
                to: to.0,
            },
        });
    }

    fn finish(self, sink: &mut dyn EventSink) -> RunReport {
        let threshold = self.config.model.survival_threshold();
        let byz_model = self.config.model.is_byzantine();
        let mut entity_digests = BTreeMap::new();
        let mut completed = true;

        for e in 0..self.config.entities {
            let entity = EntityId(e);
            let mut live: Vec<(InstanceId, Digest)> = Vec::new();
            for r in 0..self.m {
                let inst = InstanceId::new(entity, r);
                let lp = self.placement.lp_of(inst);
                if self.lps[lp.0 as usize].status != LpStatus::Running {
                    continue;
                }
                let runtime = self.lps[lp.0 as usize]
                    .instances
                    .get(&inst)
                    .expect("running LP hosts its assigned instances");
                live.push((inst, self.behavior.state_digest(&runtime.state)));
            }
            if (live.len() as u32) < threshold {
                completed = false;
            }
            if byz_model {
                // Agreed digest: strict majority of M among live instances.
                let majority = majority_threshold(self.m) as usize;
                let mut tallies: Vec<(Digest, usize)> = Vec::new();
                for (_, d) in &live {
                    match tallies.iter_mut().find(|(seen, _)| seen == d) {
                        Some((_, n)) => *n += 1,
                        None => tallies.push((*d, 1)),
                    }
                }
                if let Some((d, _)) = tallies.iter().find(|(_, n)| *n >= majority) {
                    entity_digests.insert(entity, *d);
                }
            } else if let Some((_, d)) = live.first() {
                entity_digests.insert(entity, *d);
            }
        }

        let final_step = Timestep(self.config.total_steps.saturating_sub(1));
        sink.record(SimEvent {
            step: final_step.0,
            lp: None,
            kind: EventKind::RunFinished { completed },
        });
        RunReport {
            completed,
            final_step,
            entity_digests,
            msg_counts: self.counts,
            migrations: self.migrations,
        }
    }
}

/// One LP's share of a step: deliver due messages in canonical order,
/// then step every hosted instance in ascending instance order. Pure with
/// respect to other LPs, so the engine may run it on any worker.
fn process_lp<B: EntityBehavior>(
    lp: &mut Lp<B::State>,
    t: Timestep,
    behavior: &B,
    byz_model: bool,
    m: u32,
    want_events: bool,
) -> LpStepOutput {
    let mut out = LpStepOutput::default();
    if lp.status == LpStatus::Crashed {
        return out;
    }

    let mut due = lp.inbox.remove(&t).unwrap_or_default();
    delivery_order(&mut due);
    for msg in &due {
        debug_assert_eq!(msg.deliver_step, t, "barrier safety");
        let inst = lp
            .instances
            .get_mut(&msg.dst)
            .expect("messages are routed to the hosting LP");
        let outcome = if byz_model {
            inst.ledger.filter_byzantine(msg, m)
        } else {
            inst.ledger.filter_crash(msg)
        };
        match outcome {
            FilterOutcome::Deliver { payload, masked_corrupt } => {
                out.delivered += 1;
                out.dropped_corrupt += masked_corrupt;
                if byz_model {
                    out.voted_deliveries += 1;
                }
                if want_events {
                    out.events.push(SimEvent {
                        step: t.0,
                        lp: Some(lp.id.0),
                        kind: EventKind::Delivery {
                            dst_entity: msg.dst.entity.0,
                            dst_replica: msg.dst.replica,
                            src_entity: msg.src.entity.0,
                            seq: msg.seq,
                            digest: crate::domain::digest(&payload).to_hex(),
                            voted: byz_model,
                        },
                    });
                }
                let sends =
                    behavior.on_message(&mut inst.state, msg.src.entity, &payload, t, &mut inst.rng);
                queue_sends(msg.dst, inst, sends, t, &mut out.emissions);
            }
            FilterOutcome::Pending => {}
            FilterOutcome::Drop(reason) => match reason {
                crate::replication::DropReason::Duplicate => out.filtered_duplicates += 1,
                crate::replication::DropReason::Corrupt => out.dropped_corrupt += 1,
            },
        }
    }

    let ids: Vec<InstanceId> = lp.instances.keys().copied().collect();
    for id in ids {
        let inst = lp.instances.get_mut(&id).expect("just listed");
        let sends = behavior.on_step(&mut inst.state, t, &mut inst.rng);
        queue_sends(id, inst, sends, t, &mut out.emissions);
    }

    // Copies of a key all share one deliver_step, so per-key filtering
    // state cannot be consulted after this step; reclaim it.
    for inst in lp.instances.values_mut() {
        inst.ledger.clear();
    }
    out
}

fn queue_sends<S>(
    id: InstanceId,
    inst: &mut InstanceRuntime<S>,
    sends: Vec<OutboundSend>,
    t: Timestep,
    emissions: &mut Vec<LogicalSend>,
) {
    for send in sends {
        assert!(
            send.delay >= 1,
            "zero-delay send rejected: instance {id} at step {t} (delivery needs one step of lookahead)"
        );
        assert!(
            send.dst_entity != id.entity,
            "self-send rejected: entity {} at step {t} (replicas are independent copies; only inter-entity sends exist)",
            id.entity
        );
        let counter = inst.seq_counters.entry(send.dst_entity).or_insert(0);
        let seq = *counter;
        *counter += 1;
        emissions.push(LogicalSend {
            src: id,
            dst_entity: send.dst_entity,
            seq,
            send_step: t,
            delay: send.delay,
            payload: send.payload,
        });
    }
}
