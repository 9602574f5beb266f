//! Scripted failure injection: permanent LP crashes and Byzantine sender
//! behaviors, applied deterministically at configured timesteps.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{digest, LpId, Message, Payload, Timestep};

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("LP {lp} has more than one failure event; transitions are permanent")]
    DuplicateLp { lp: LpId },
    #[error("failure event targets LP {lp} but the run has only {lps} LPs")]
    LpOutOfRange { lp: LpId, lps: u32 },
    #[error("CorruptWithProb probability {p} is outside [0, 1]")]
    InvalidProbability { p: f64 },
}

/// How a Byzantine LP rewrites the messages its instances emit. The
/// digest always matches the (possibly corrupted) payload: the fault is a
/// lying sender, not a broken hash. Source and key fields are never
/// altered, mirroring the no-forgery transport assumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ByzantineMode {
    /// Replace every payload with random bytes of the original length.
    CorruptAll,
    /// Corrupt each physical copy independently with probability `p`.
    CorruptWithProb(f64),
    /// Emit nothing at all.
    Silent,
    /// Replace payloads with random garbage of random length.
    GarbagePayloads,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ByzantineBehavior {
    pub mode: ByzantineMode,
    pub rng_seed: u64,
}

impl ByzantineBehavior {
    pub fn new(mode: ByzantineMode, rng_seed: u64) -> Self {
        ByzantineBehavior { mode, rng_seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultKind {
    Crash,
    TurnByzantine(ByzantineBehavior),
}

/// One scripted transition. At most one event per LP per run; crashes and
/// Byzantine turns are permanent.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureEvent {
    pub lp: LpId,
    pub step: Timestep,
    pub kind: FaultKind,
}

/// The scripted failure events of a run, sorted by step.
#[derive(Debug, Clone, Default)]
pub struct FailureSchedule {
    events: Vec<FailureEvent>,
}

impl FailureSchedule {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Validates that LPs are distinct and probabilities are in range,
    /// then stores the events sorted by (step, lp).
    pub fn new(mut events: Vec<FailureEvent>) -> Result<Self, ScheduleError> {
        for e in &events {
            if let FaultKind::TurnByzantine(b) = e.kind {
                if let ByzantineMode::CorruptWithProb(p) = b.mode {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(ScheduleError::InvalidProbability { p });
                    }
                }
            }
        }
        events.sort_by_key(|e| (e.step, e.lp));
        let mut by_lp: Vec<LpId> = events.iter().map(|e| e.lp).collect();
        by_lp.sort_unstable();
        for w in by_lp.windows(2) {
            if w[0] == w[1] {
                return Err(ScheduleError::DuplicateLp { lp: w[0] });
            }
        }
        Ok(FailureSchedule { events })
    }

    pub fn events(&self) -> &[FailureEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Check every event targets an LP below `lps`.
    pub fn validate_for(&self, lps: u32) -> Result<(), ScheduleError> {
        for e in &self.events {
            if e.lp.0 >= lps {
                return Err(ScheduleError::LpOutOfRange { lp: e.lp, lps });
            }
        }
        Ok(())
    }

    /// Events due exactly at `step`.
    pub fn due_at(&self, step: Timestep) -> impl Iterator<Item = &FailureEvent> {
        self.events.iter().filter(move |e| e.step == step)
    }
}

/// Apply a Byzantine behavior to one outbound physical copy. Returns
/// `None` when the copy is suppressed entirely.
pub fn mangle(behavior: &ByzantineBehavior, msg: Message, rng: &mut ChaCha8Rng) -> Option<Message> {
    let original_len = msg.payload.len();
    match behavior.mode {
        ByzantineMode::Silent => None,
        ByzantineMode::CorruptAll => Some(corrupt(msg, original_len, rng)),
        ByzantineMode::GarbagePayloads => {
            let len = rng.random_range(1..=64usize);
            Some(corrupt(msg, len, rng))
        }
        ByzantineMode::CorruptWithProb(p) => {
            if rng.random_bool(p) {
                Some(corrupt(msg, original_len, rng))
            } else {
                Some(msg)
            }
        }
    }
}

// Replace the payload with `len` random bytes, guaranteed different from
// the original, and recompute the digest to match. Key fields untouched.
fn corrupt(msg: Message, len: usize, rng: &mut ChaCha8Rng) -> Message {
    let mut bytes = vec![0u8; len.max(1)];
    rng.fill(&mut bytes[..]);
    if bytes[..] == *msg.payload.as_bytes() {
        bytes[0] = bytes[0].wrapping_add(1);
    }
    let payload = Payload::from(bytes);
    let payload_digest = digest(&payload);
    Message { payload, digest: payload_digest, ..msg }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{EntityId, InstanceId};
    use rand::SeedableRng;

    fn sample_msg(payload: &[u8]) -> Message {
        let p = Payload::from(payload);
        let d = digest(&p);
        Message {
            src: InstanceId::new(EntityId(0), 0),
            dst: InstanceId::new(EntityId(1), 0),
            seq: 7,
            send_step: Timestep(3),
            deliver_step: Timestep(5),
            payload: p,
            digest: d,
        }
    }

    #[test]
    fn schedule_rejects_duplicate_lp() {
        let crash = |lp, step| FailureEvent {
            lp: LpId(lp),
            step: Timestep(step),
            kind: FaultKind::Crash,
        };
        let err = FailureSchedule::new(vec![crash(2, 10), crash(2, 20)]).unwrap_err();
        assert_eq!(err, ScheduleError::DuplicateLp { lp: LpId(2) });
    }

    #[test]
    fn schedule_sorts_by_step() {
        let crash = |lp, step| FailureEvent {
            lp: LpId(lp),
            step: Timestep(step),
            kind: FaultKind::Crash,
        };
        let s = FailureSchedule::new(vec![crash(1, 30), crash(0, 10)]).unwrap();
        assert_eq!(s.events()[0].lp, LpId(0));
        assert_eq!(s.due_at(Timestep(30)).count(), 1);
        assert_eq!(s.due_at(Timestep(11)).count(), 0);
        s.validate_for(2).unwrap();
        assert!(s.validate_for(1).is_err());
    }

    #[test]
    fn silent_suppresses_every_message() {
        let behavior = ByzantineBehavior::new(ByzantineMode::Silent, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(behavior.rng_seed);
        for i in 0..20u8 {
            assert!(mangle(&behavior, sample_msg(&[i]), &mut rng).is_none());
        }
    }

    #[test]
    fn corrupt_with_prob_zero_is_identity() {
        let behavior = ByzantineBehavior::new(ByzantineMode::CorruptWithProb(0.0), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(behavior.rng_seed);
        let original = sample_msg(b"unchanged");
        let out = mangle(&behavior, original.clone(), &mut rng).unwrap();
        assert_eq!(out.payload, original.payload);
        assert_eq!(out.digest, original.digest);
    }

    #[test]
    fn corrupt_all_changes_payload_but_not_identity() {
        let behavior = ByzantineBehavior::new(ByzantineMode::CorruptAll, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(behavior.rng_seed);
        for payload in [&b"x"[..], &b"hello"[..], &[][..]] {
            let original = sample_msg(payload);
            let out = mangle(&behavior, original.clone(), &mut rng).unwrap();
            assert_ne!(out.payload, original.payload);
            assert_eq!(out.digest, digest(&out.payload), "digest matches corrupt payload");
            assert_eq!(out.key(), original.key());
            assert_eq!(out.src, original.src);
        }
    }

    #[test]
    fn corruption_is_deterministic_per_seed() {
        let behavior = ByzantineBehavior::new(ByzantineMode::GarbagePayloads, 42);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(behavior.rng_seed);
            (0..50u8)
                .map(|i| mangle(&behavior, sample_msg(&[i, i]), &mut rng).unwrap().digest)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn invalid_probability_rejected() {
        let ev = FailureEvent {
            lp: LpId(0),
            step: Timestep(0),
            kind: FaultKind::TurnByzantine(ByzantineBehavior::new(
                ByzantineMode::CorruptWithProb(1.5),
                0,
            )),
        };
        assert!(matches!(
            FailureSchedule::new(vec![ev]),
            Err(ScheduleError::InvalidProbability { .. })
        ));
    }
}
