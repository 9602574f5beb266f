//! Shared domain vocabulary: identifiers, simulation time, payloads,
//! digests and the replicated message type used by every other module.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

/// Discrete simulation time. Step `t` is executed after the step-`t-1`
/// barrier has completed on every running LP.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestep(pub u64);

impl Timestep {
    /// Delivery step for a send issued at this step with the given delay.
    pub fn after(self, delay: u64) -> Timestep {
        Timestep(self.0 + delay)
    }
}

impl fmt::Display for Timestep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identifies one logical simulation entity, in `[0, N)`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One of the `M` replicated instances of an entity.
///
/// Ordering is `(entity, replica)` lexicographic; the engine relies on it
/// for its deterministic per-step iteration order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct InstanceId {
    pub entity: EntityId,
    pub replica: u32,
}

impl InstanceId {
    pub fn new(entity: EntityId, replica: u32) -> Self {
        InstanceId { entity, replica }
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.entity.0, self.replica)
    }
}

/// Identifies a logical process, in `[0, L)`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct LpId(pub u32);

impl fmt::Display for LpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which failures a run must survive. The replication degree `M` follows
/// from the model: `F + 1` instances mask `F` crashes, `2f + 1` instances
/// mask `f` Byzantine processes under majority voting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureModel {
    CrashTolerant { tolerated_faults: u32 },
    ByzantineTolerant { tolerated_faults: u32 },
}

impl FailureModel {
    /// Number of instances created per entity.
    pub fn replication_degree(&self) -> u32 {
        match *self {
            FailureModel::CrashTolerant { tolerated_faults } => tolerated_faults + 1,
            FailureModel::ByzantineTolerant { tolerated_faults } => 2 * tolerated_faults + 1,
        }
    }

    pub fn is_byzantine(&self) -> bool {
        matches!(self, FailureModel::ByzantineTolerant { .. })
    }

    /// Minimum live instances per entity for the run to count as completed:
    /// one survivor under the crash model, a strict majority under the
    /// Byzantine model.
    pub fn survival_threshold(&self) -> u32 {
        match self {
            FailureModel::CrashTolerant { .. } => 1,
            FailureModel::ByzantineTolerant { .. } => {
                majority_threshold(self.replication_degree())
            }
        }
    }
}

/// Strict majority of `m` instances: `ceil((m + 1) / 2)`.
pub fn majority_threshold(m: u32) -> u32 {
    debug_assert!(m >= 1);
    (m + 1).div_ceil(2)
}

/// Immutable message payload. Byte equality is the only notion of
/// "same content"; clones share the underlying buffer so the M^2 fan-out
/// does not copy payload bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Payload(Arc<[u8]>);

impl Payload {
    pub fn new(bytes: impl Into<Arc<[u8]>>) -> Self {
        Payload(bytes.into())
    }

    pub fn empty() -> Self {
        Payload(Arc::from(&[][..]))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<u8>> for Payload {
    fn from(bytes: Vec<u8>) -> Self {
        Payload(bytes.into())
    }
}

impl From<&[u8]> for Payload {
    fn from(bytes: &[u8]) -> Self {
        Payload(Arc::from(bytes))
    }
}

/// SHA-256 digest. The algorithm is fixed (not a per-process randomized
/// hash) because run reports compare digests across runs and hosts.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest([u8; 32]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(64);
        for b in self.0 {
            use fmt::Write;
            write!(s, "{b:02x}").expect("writing to String cannot fail");
        }
        s
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

/// Digest of a payload's bytes.
pub fn digest(payload: &Payload) -> Digest {
    digest_bytes(payload.as_bytes())
}

/// Digest of a raw byte slice.
pub fn digest_bytes(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// Incremental digest builder for hashing structured state.
#[derive(Default)]
pub struct DigestHasher(Sha256);

impl DigestHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, bytes: &[u8]) {
        self.0.update(bytes);
    }

    pub fn update_u32(&mut self, v: u32) {
        self.0.update(v.to_le_bytes());
    }

    pub fn update_u64(&mut self, v: u64) {
        self.0.update(v.to_le_bytes());
    }

    /// Hash an f64 by its IEEE-754 bit pattern.
    pub fn update_f64(&mut self, v: f64) {
        self.0.update(v.to_bits().to_le_bytes());
    }

    pub fn finalize(self) -> Digest {
        Digest(self.0.finalize().into())
    }
}

/// Identity of a logical message: equal across all replicated copies of
/// one logical send, distinct across distinct logical sends.
///
/// `seq` is a run-long counter maintained per (source entity, destination
/// entity); replicas of the sender keep identical counters because their
/// send sequences are identical. Derived ordering is lexicographic in
/// field declaration order, which is the order the delivery sort uses.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct MessageKey {
    pub src_entity: EntityId,
    pub dst_entity: EntityId,
    pub seq: u64,
    pub deliver_step: Timestep,
}

/// A physical message: one replicated copy of a logical send, addressed
/// to a single destination instance.
#[derive(Debug, Clone)]
pub struct Message {
    pub src: InstanceId,
    pub dst: InstanceId,
    pub seq: u64,
    pub send_step: Timestep,
    pub deliver_step: Timestep,
    pub payload: Payload,
    pub digest: Digest,
}

impl Message {
    pub fn key(&self) -> MessageKey {
        MessageKey {
            src_entity: self.src.entity,
            dst_entity: self.dst.entity,
            seq: self.seq,
            deliver_step: self.deliver_step,
        }
    }
}
