//! Fault-tolerant time-stepped parallel discrete-event simulation.
//!
//! The engine replicates every simulation entity into M instances spread
//! over distinct logical processes, fans each logical message out to all
//! destination replicas (M^2 copies per interaction), and filters on the
//! receiving side: first-copy wins under the crash model, digest-majority
//! voting under the Byzantine model. Runs are bit-deterministic for a
//! fixed configuration and seed, whatever the worker count, which is what
//! makes replica states interchangeable when their hosts fail.
//!
//! The [`reliability`] module carries the matching analytical model (the
//! placement urn problem, the series-system law, and the replication
//! degree selector) together with a Monte Carlo oracle that validates it.

pub mod domain;
pub mod engine;
pub mod faults;
pub mod migration;
pub mod p2p;
pub mod reliability;
pub mod replication;

pub use domain::{
    digest, digest_bytes, majority_threshold, Digest, DigestHasher, EntityId, FailureModel,
    InstanceId, LpId, Message, MessageKey, Payload, Timestep,
};
pub use engine::{
    delivery_order, per_instance_rng_seed, CollectingSink, ConfigError, EntityBehavior, EntityRng,
    EventKind, EventSink, MessageCounts, MigrationSettings, NullSink, OutboundSend,
    PlacementPolicy, RunReport, SimEvent, Simulation, SimulationConfig,
};
pub use faults::{ByzantineBehavior, ByzantineMode, FailureEvent, FailureSchedule, FaultKind};
pub use p2p::{P2pModel, P2pParams};
pub use reliability::{FailureRate, McEstimate, ModelKind, ReliabilityError, ReliabilityQuery};
