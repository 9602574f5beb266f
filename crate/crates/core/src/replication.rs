//! Functional replication: constrained placement of entity instances,
//! M-way message fan-out, and receiver-side filtering (first-copy under
//! the crash model, digest-majority voting under the Byzantine model).

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::domain::{
    digest, majority_threshold, Digest, EntityId, InstanceId, LpId, Message, MessageKey, Payload,
    Timestep,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlacementError {
    #[error("replication degree M={m} exceeds LP count L={l}: sibling instances cannot be placed on distinct LPs")]
    ReplicationExceedsLps { m: u32, l: u32 },
    #[error("placement constraint violated: instances {a} and {b} share LP {lp}")]
    SiblingsColocated { a: InstanceId, b: InstanceId, lp: LpId },
}

/// Assignment of every one of the N x M instances to an LP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementMap {
    assignment: Vec<LpId>, // indexed by entity * m + replica
    entities: u32,
    replicas: u32,
    lps: u32,
}

impl PlacementMap {
    fn index(&self, inst: InstanceId) -> usize {
        debug_assert!(inst.entity.0 < self.entities && inst.replica < self.replicas);
        inst.entity.0 as usize * self.replicas as usize + inst.replica as usize
    }

    pub fn lp_of(&self, inst: InstanceId) -> LpId {
        self.assignment[self.index(inst)]
    }

    pub fn entities(&self) -> u32 {
        self.entities
    }

    pub fn replicas(&self) -> u32 {
        self.replicas
    }

    pub fn lps(&self) -> u32 {
        self.lps
    }

    pub fn instance_count(&self) -> usize {
        self.assignment.len()
    }

    /// All instances in ascending `InstanceId` order with their LPs.
    pub fn iter(&self) -> impl Iterator<Item = (InstanceId, LpId)> + '_ {
        self.assignment.iter().enumerate().map(|(i, &lp)| {
            let entity = EntityId((i / self.replicas as usize) as u32);
            let replica = (i % self.replicas as usize) as u32;
            (InstanceId::new(entity, replica), lp)
        })
    }

    /// True if any replica of `entity` other than `except` is assigned to `lp`.
    pub fn hosts_sibling(&self, entity: EntityId, lp: LpId, except: u32) -> bool {
        (0..self.replicas).any(|r| {
            r != except && self.lp_of(InstanceId::new(entity, r)) == lp
        })
    }

    /// Number of instances assigned to each LP.
    pub fn load_per_lp(&self) -> Vec<u64> {
        let mut loads = vec![0u64; self.lps as usize];
        for &lp in &self.assignment {
            loads[lp.0 as usize] += 1;
        }
        loads
    }

    pub(crate) fn reassign(&mut self, inst: InstanceId, lp: LpId) {
        let idx = self.index(inst);
        self.assignment[idx] = lp;
    }

    /// Audit the no-colocated-siblings constraint over the whole map.
    pub fn validate_constraint(&self) -> Result<(), PlacementError> {
        let mut seen: Vec<Option<u32>> = vec![None; self.lps as usize];
        for e in 0..self.entities {
            seen.iter_mut().for_each(|s| *s = None);
            for r in 0..self.replicas {
                let inst = InstanceId::new(EntityId(e), r);
                let lp = self.lp_of(inst);
                if let Some(prev) = seen[lp.0 as usize] {
                    return Err(PlacementError::SiblingsColocated {
                        a: InstanceId::new(EntityId(e), prev),
                        b: inst,
                        lp,
                    });
                }
                seen[lp.0 as usize] = Some(r);
            }
        }
        Ok(())
    }
}

/// Place `entities * replicas` instances on `lps` LPs.
///
/// With `enforce_constraint` each entity gets a uniformly random
/// `replicas`-subset of the LPs, one instance per chosen LP. Without it,
/// every instance independently picks a uniform LP (the with-replacement
/// urn; used by the unconstrained reliability oracle).
pub fn place_instances<R: Rng + ?Sized>(
    entities: u32,
    replicas: u32,
    lps: u32,
    rng: &mut R,
    enforce_constraint: bool,
) -> Result<PlacementMap, PlacementError> {
    assert!(replicas >= 1 && lps >= 1);
    if enforce_constraint && replicas > lps {
        return Err(PlacementError::ReplicationExceedsLps { m: replicas, l: lps });
    }
    let mut assignment = Vec::with_capacity(entities as usize * replicas as usize);
    for _ in 0..entities {
        if enforce_constraint {
            let picks = rand::seq::index::sample(rng, lps as usize, replicas as usize);
            assignment.extend(picks.iter().map(|i| LpId(i as u32)));
        } else {
            for _ in 0..replicas {
                assignment.push(LpId(rng.random_range(0..lps)));
            }
        }
    }
    Ok(PlacementMap { assignment, entities, replicas, lps })
}

/// Deterministic round-robin placement: replica `r` of entity `e` goes to
/// LP `(e + r) mod L`. Satisfies the distinct-LP constraint for M <= L.
pub fn place_round_robin(
    entities: u32,
    replicas: u32,
    lps: u32,
) -> Result<PlacementMap, PlacementError> {
    assert!(replicas >= 1 && lps >= 1);
    if replicas > lps {
        return Err(PlacementError::ReplicationExceedsLps { m: replicas, l: lps });
    }
    let assignment = (0..entities)
        .flat_map(|e| (0..replicas).map(move |r| LpId((e + r) % lps)))
        .collect();
    Ok(PlacementMap { assignment, entities, replicas, lps })
}

/// One logical send as emitted by a source instance, before fan-out.
#[derive(Debug, Clone)]
pub struct LogicalSend {
    pub src: InstanceId,
    pub dst_entity: EntityId,
    pub seq: u64,
    pub send_step: Timestep,
    pub delay: u64,
    pub payload: Payload,
}

impl LogicalSend {
    pub fn key(&self) -> MessageKey {
        MessageKey {
            src_entity: self.src.entity,
            dst_entity: self.dst_entity,
            seq: self.seq,
            deliver_step: self.send_step.after(self.delay),
        }
    }
}

/// Replicate one logical send into `m` physical messages, one per replica
/// of the destination entity. All copies share the same `MessageKey` and
/// payload digest; the source replica index is the only difference, so a
/// full round over all `m` source replicas yields `m^2` physical messages
/// per logical interaction.
pub fn fan_out(send: &LogicalSend, m: u32) -> Vec<Message> {
    debug_assert!(send.delay >= 1, "delivery must be at least one step ahead");
    let payload_digest = digest(&send.payload);
    let deliver_step = send.send_step.after(send.delay);
    (0..m)
        .map(|replica| Message {
            src: send.src,
            dst: InstanceId::new(send.dst_entity, replica),
            seq: send.seq,
            send_step: send.send_step,
            deliver_step,
            payload: send.payload.clone(),
            digest: payload_digest,
        })
        .collect()
}

/// Outcome of pushing one received copy through a filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterOutcome {
    /// Hand the payload to the destination instance. `masked_corrupt` is
    /// the number of previously recorded copies of this key whose digest
    /// lost the vote (always 0 under the crash filter).
    Deliver { payload: Payload, masked_corrupt: u64 },
    /// Byzantine filter only: copy recorded, majority not yet reached.
    Pending,
    /// Copy discarded.
    Drop(DropReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    /// Key already delivered, or a second copy from the same source replica.
    Duplicate,
    /// Digest disagrees with the digest that won the vote for this key.
    Corrupt,
}

#[derive(Debug, Default)]
struct KeyEntry {
    delivered: Option<Digest>,
    // (source replica, digest) pairs seen before delivery.
    copies: Vec<(u32, Digest)>,
    // First-arrived payload per distinct digest.
    retained: Vec<(Digest, Payload)>,
}

/// Per-destination-instance filtering state. Owned by a single LP and
/// never shared across workers.
#[derive(Debug, Default)]
pub struct VoteLedger {
    entries: HashMap<MessageKey, KeyEntry>,
}

impl VoteLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Crash-model filter: deliver the first copy of each key, drop the rest.
    pub fn filter_crash(&mut self, msg: &Message) -> FilterOutcome {
        let entry = self.entries.entry(msg.key()).or_default();
        if entry.delivered.is_some() {
            return FilterOutcome::Drop(DropReason::Duplicate);
        }
        entry.delivered = Some(msg.digest);
        FilterOutcome::Deliver { payload: msg.payload.clone(), masked_corrupt: 0 }
    }

    /// Byzantine-model filter: record copies per (source replica, digest)
    /// and deliver once some digest reaches the strict majority of `m`.
    /// The delivered payload is the first-arrived copy bearing the winning
    /// digest. A duplicate source replica for the same key is dropped.
    pub fn filter_byzantine(&mut self, msg: &Message, m: u32) -> FilterOutcome {
        let threshold = majority_threshold(m) as usize;
        let entry = self.entries.entry(msg.key()).or_default();

        if let Some(winner) = entry.delivered {
            return if msg.digest == winner {
                FilterOutcome::Drop(DropReason::Duplicate)
            } else {
                FilterOutcome::Drop(DropReason::Corrupt)
            };
        }
        if entry.copies.iter().any(|&(r, _)| r == msg.src.replica) {
            return FilterOutcome::Drop(DropReason::Duplicate);
        }

        entry.copies.push((msg.src.replica, msg.digest));
        if !entry.retained.iter().any(|(d, _)| *d == msg.digest) {
            entry.retained.push((msg.digest, msg.payload.clone()));
        }

        let votes = entry.copies.iter().filter(|&&(_, d)| d == msg.digest).count();
        if votes < threshold {
            return FilterOutcome::Pending;
        }

        // With m = 2f + 1 two digests cannot both reach the threshold:
        // 2 * ceil((m + 1) / 2) > m.
        entry.delivered = Some(msg.digest);
        let masked = (entry.copies.len() - votes) as u64;
        let payload = entry
            .retained
            .iter()
            .find(|(d, _)| *d == msg.digest)
            .map(|(_, p)| p.clone())
            .expect("winning digest has a retained payload");
        entry.retained.clear();
        FilterOutcome::Deliver { payload, masked_corrupt: masked }
    }

    /// Drop all per-key state. The engine calls this after each delivery
    /// phase: every copy of a key shares one deliver_step, so once that
    /// step's barrier has passed no further copy of the key can arrive and
    /// pending entries are permanently undeliverable.
    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn pending_keys(&self) -> usize {
        self.entries.values().filter(|e| e.delivered.is_none()).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn msg(src_replica: u32, dst_replica: u32, payload: &[u8]) -> Message {
        let p = Payload::from(payload);
        let d = digest(&p);
        Message {
            src: InstanceId::new(EntityId(0), src_replica),
            dst: InstanceId::new(EntityId(1), dst_replica),
            seq: 0,
            send_step: Timestep(0),
            deliver_step: Timestep(1),
            payload: p,
            digest: d,
        }
    }

    #[test]
    fn constrained_placement_rejects_m_above_l() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = place_instances(10, 4, 3, &mut rng, true).unwrap_err();
        assert_eq!(err, PlacementError::ReplicationExceedsLps { m: 4, l: 3 });
    }

    #[test]
    fn constrained_placement_with_m_equal_l_uses_every_lp() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let map = place_instances(5, 3, 3, &mut rng, true).unwrap();
        map.validate_constraint().unwrap();
        for e in 0..5 {
            let mut lps: Vec<u32> = (0..3)
                .map(|r| map.lp_of(InstanceId::new(EntityId(e), r)).0)
                .collect();
            lps.sort_unstable();
            assert_eq!(lps, vec![0, 1, 2]);
        }
    }

    #[test]
    fn constrained_pairs_are_uniform_over_combinations() {
        // N=1, M=2, L=4: each unordered LP pair should appear with
        // frequency 1/6 within 3 binomial standard deviations.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 100_000usize;
        let mut counts = HashMap::new();
        for _ in 0..trials {
            let map = place_instances(1, 2, 4, &mut rng, true).unwrap();
            let a = map.lp_of(InstanceId::new(EntityId(0), 0)).0;
            let b = map.lp_of(InstanceId::new(EntityId(0), 1)).0;
            assert_ne!(a, b);
            *counts.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        let p = 1.0 / 6.0;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for (&pair, &n) in &counts {
            let dev = (n as f64 - trials as f64 * p).abs();
            assert!(dev <= 3.0 * sigma, "pair {pair:?}: count {n} deviates {dev:.1} > 3 sigma");
        }
    }

    #[test]
    fn unconstrained_placement_colocates_with_expected_frequency() {
        // N=1, M=2, L=2 without the constraint: both instances land on the
        // same LP with probability 1/2 (the (X/L)^M intuition).
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trials = 100_000usize;
        let mut same = 0usize;
        for _ in 0..trials {
            let map = place_instances(1, 2, 2, &mut rng, false).unwrap();
            if map.lp_of(InstanceId::new(EntityId(0), 0))
                == map.lp_of(InstanceId::new(EntityId(0), 1))
            {
                same += 1;
            }
        }
        let sigma = (trials as f64 * 0.25).sqrt();
        assert!((same as f64 - trials as f64 * 0.5).abs() <= 3.0 * sigma);
    }

    #[test]
    fn round_robin_satisfies_constraint() {
        let map = place_round_robin(7, 3, 5).unwrap();
        map.validate_constraint().unwrap();
        assert!(place_round_robin(7, 6, 5).is_err());
    }

    #[test]
    fn fan_out_m1_is_unreplicated() {
        let send = LogicalSend {
            src: InstanceId::new(EntityId(0), 0),
            dst_entity: EntityId(1),
            seq: 9,
            send_step: Timestep(4),
            delay: 2,
            payload: Payload::from(&b"ping"[..]),
        };
        let copies = fan_out(&send, 1);
        assert_eq!(copies.len(), 1);
        assert_eq!(copies[0].dst, InstanceId::new(EntityId(1), 0));
        assert_eq!(copies[0].deliver_step, Timestep(6));
    }

    #[test]
    fn fan_out_m3_shares_key_and_digest() {
        let send = LogicalSend {
            src: InstanceId::new(EntityId(0), 2),
            dst_entity: EntityId(1),
            seq: 3,
            send_step: Timestep(10),
            delay: 1,
            payload: Payload::from(&b"payload"[..]),
        };
        let copies = fan_out(&send, 3);
        assert_eq!(copies.len(), 3);
        let key = copies[0].key();
        let mut replicas: Vec<u32> = copies
            .iter()
            .map(|c| {
                assert_eq!(c.key(), key);
                assert_eq!(c.digest, copies[0].digest);
                c.dst.replica
            })
            .collect();
        replicas.sort_unstable();
        assert_eq!(replicas, vec![0, 1, 2]);
    }

    #[test]
    fn fan_out_from_all_replicas_is_m_squared_with_one_key() {
        let m = 4;
        let mut copies = Vec::new();
        for src_replica in 0..m {
            let send = LogicalSend {
                src: InstanceId::new(EntityId(0), src_replica),
                dst_entity: EntityId(1),
                seq: 0,
                send_step: Timestep(0),
                delay: 1,
                payload: Payload::from(&b"x"[..]),
            };
            copies.extend(fan_out(&send, m));
        }
        assert_eq!(copies.len(), (m * m) as usize);
        let key = copies[0].key();
        assert!(copies.iter().all(|c| c.key() == key));
    }

    #[test]
    fn crash_filter_first_copy_wins() {
        let mut ledger = VoteLedger::new();
        assert!(matches!(
            ledger.filter_crash(&msg(0, 0, b"a")),
            FilterOutcome::Deliver { .. }
        ));
        assert_eq!(
            ledger.filter_crash(&msg(1, 0, b"a")),
            FilterOutcome::Drop(DropReason::Duplicate)
        );
        assert_eq!(
            ledger.filter_crash(&msg(2, 0, b"a")),
            FilterOutcome::Drop(DropReason::Duplicate)
        );
    }

    #[test]
    fn crash_filter_is_per_key() {
        let mut ledger = VoteLedger::new();
        let k1 = msg(0, 0, b"a");
        let mut k2 = msg(0, 0, b"b");
        k2.seq = 1;
        // Interleaved keys k1, k2, k1: deliver, deliver, drop.
        assert!(matches!(ledger.filter_crash(&k1), FilterOutcome::Deliver { .. }));
        assert!(matches!(ledger.filter_crash(&k2), FilterOutcome::Deliver { .. }));
        assert_eq!(ledger.filter_crash(&k1), FilterOutcome::Drop(DropReason::Duplicate));
    }

    #[test]
    fn byzantine_filter_delivers_on_majority() {
        let mut ledger = VoteLedger::new();
        assert_eq!(ledger.filter_byzantine(&msg(0, 0, b"a"), 3), FilterOutcome::Pending);
        match ledger.filter_byzantine(&msg(1, 0, b"a"), 3) {
            FilterOutcome::Deliver { payload, masked_corrupt } => {
                assert_eq!(payload.as_bytes(), b"a");
                assert_eq!(masked_corrupt, 0);
            }
            other => panic!("expected delivery, got {other:?}"),
        }
        assert_eq!(
            ledger.filter_byzantine(&msg(2, 0, b"a"), 3),
            FilterOutcome::Drop(DropReason::Duplicate)
        );
    }

    #[test]
    fn byzantine_filter_masks_one_corrupt_copy() {
        let mut ledger = VoteLedger::new();
        assert_eq!(ledger.filter_byzantine(&msg(0, 0, b"good"), 3), FilterOutcome::Pending);
        assert_eq!(ledger.filter_byzantine(&msg(1, 0, b"evil"), 3), FilterOutcome::Pending);
        match ledger.filter_byzantine(&msg(2, 0, b"good"), 3) {
            FilterOutcome::Deliver { payload, masked_corrupt } => {
                assert_eq!(payload.as_bytes(), b"good");
                assert_eq!(masked_corrupt, 1);
            }
            other => panic!("expected delivery, got {other:?}"),
        }
    }

    #[test]
    fn byzantine_filter_stays_pending_below_threshold() {
        let mut ledger = VoteLedger::new();
        assert_eq!(ledger.filter_byzantine(&msg(0, 0, b"only"), 3), FilterOutcome::Pending);
        assert_eq!(ledger.pending_keys(), 1);
    }

    #[test]
    fn byzantine_filter_drops_duplicate_source_replica() {
        let mut ledger = VoteLedger::new();
        assert_eq!(ledger.filter_byzantine(&msg(0, 0, b"a"), 3), FilterOutcome::Pending);
        // Same key, same source replica, different content: recorded once.
        assert_eq!(
            ledger.filter_byzantine(&msg(0, 0, b"b"), 3),
            FilterOutcome::Drop(DropReason::Duplicate)
        );
    }

    #[test]
    fn byzantine_vote_survives_all_corruption_patterns() {
        // For M in {3, 5}: every subset of <= f corrupt source replicas,
        // under every arrival order, must deliver the correct payload.
        for m in [3u32, 5] {
            let f = (m - 1) / 2;
            let replicas: Vec<u32> = (0..m).collect();
            for corrupt_mask in 0u32..(1 << m) {
                if corrupt_mask.count_ones() > f {
                    continue;
                }
                for perm in permutations(&replicas) {
                    let mut ledger = VoteLedger::new();
                    let mut delivered = None;
                    for &r in &perm {
                        let corrupt = corrupt_mask & (1 << r) != 0;
                        let body: Vec<u8> = if corrupt {
                            vec![0xBA, 0xD0, r as u8]
                        } else {
                            b"correct".to_vec()
                        };
                        if let FilterOutcome::Deliver { payload, .. } =
                            ledger.filter_byzantine(&msg(r, 0, &body), m)
                        {
                            assert!(delivered.is_none(), "double delivery");
                            delivered = Some(payload);
                        }
                    }
                    let payload = delivered.expect("enough correct copies must deliver");
                    assert_eq!(payload.as_bytes(), b"correct", "m={m} mask={corrupt_mask:b}");
                }
            }
        }
    }

    fn permutations(items: &[u32]) -> Vec<Vec<u32>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for (i, &head) in items.iter().enumerate() {
            let mut rest = items.to_vec();
            rest.remove(i);
            for mut tail in permutations(&rest) {
                tail.insert(0, head);
                out.push(tail);
            }
        }
        out
    }
}
