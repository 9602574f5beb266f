//! The benchmark workload: a PING/PONG latency-estimation protocol over a
//! random directed overlay with uniform out-degree. Nodes periodically
//! ping a random target (a neighbor with probability `p`), measure the
//! round trip from the echoed PONG, and occasionally swap their worst
//! neighbor for the best-latency known non-neighbor.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::domain::{DigestHasher, EntityId, Payload, Timestep};
use crate::engine::{derived_seed, seed_domain, EntityBehavior, EntityRng, OutboundSend};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OverlayError {
    #[error("out-degree {d} must be in [1, n) for n={n} nodes")]
    BadDegree { n: u32, d: u32 },
}

/// Random directed overlay: every node has exactly `d` distinct
/// out-neighbors, never itself.
#[derive(Debug, Clone)]
pub struct OverlayGraph {
    n: u32,
    d: u32,
    adjacency: Vec<Vec<EntityId>>,
}

impl OverlayGraph {
    pub fn node_count(&self) -> u32 {
        self.n
    }

    pub fn out_degree(&self) -> u32 {
        self.d
    }

    pub fn neighbors(&self, node: EntityId) -> &[EntityId] {
        &self.adjacency[node.0 as usize]
    }
}

/// Build a uniform-out-degree overlay: each node's neighbor list is a
/// uniform random `d`-subset of the other `n - 1` nodes.
pub fn build_overlay<R: Rng + ?Sized>(n: u32, d: u32, rng: &mut R) -> Result<OverlayGraph, OverlayError> {
    if d == 0 || d >= n {
        return Err(OverlayError::BadDegree { n, d });
    }
    let adjacency = (0..n)
        .map(|i| {
            rand::seq::index::sample(rng, (n - 1) as usize, d as usize)
                .iter()
                .map(|j| {
                    let j = j as u32;
                    EntityId(if j >= i { j + 1 } else { j })
                })
                .collect()
        })
        .collect();
    Ok(OverlayGraph { n, d, adjacency })
}

/// Lognormal link latency, discretized to whole steps (minimum one).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyModel {
    pub mu: f64,
    pub sigma: f64,
    /// Wall-time per simulation step, in the same unit as `exp(mu)`.
    pub step_quantum: f64,
}

pub fn sample_latency_steps<R: Rng + ?Sized>(model: &LatencyModel, rng: &mut R) -> u64 {
    debug_assert!(model.sigma >= 0.0 && model.step_quantum > 0.0);
    let z: f64 = rng.sample(StandardNormal);
    let latency = (model.mu + model.sigma * z).exp();
    ((latency / model.step_quantum).round() as u64).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct P2pParams {
    pub out_degree: u32,
    /// Send one PING every this many steps.
    pub ping_period: u64,
    /// Probability the PING target is an out-neighbor.
    pub neighbor_prob: f64,
    pub latency: LatencyModel,
    /// Swap the worst neighbor for the best known non-neighbor every this
    /// many steps (0 disables refresh).
    pub refresh_period: u64,
}

impl Default for P2pParams {
    fn default() -> Self {
        P2pParams {
            out_degree: 5,
            ping_period: 4,
            neighbor_prob: 0.8,
            latency: LatencyModel { mu: (4.0f64).ln(), sigma: 0.5, step_quantum: 1.0 },
            refresh_period: 32,
        }
    }
}

const TAG_PING: u8 = 0x01;
const TAG_PONG: u8 = 0x02;

fn encode(tag: u8, ping_seq: u64) -> Payload {
    let mut bytes = Vec::with_capacity(9);
    bytes.push(tag);
    bytes.extend_from_slice(&ping_seq.to_le_bytes());
    Payload::from(bytes)
}

fn decode(payload: &Payload) -> Option<(u8, u64)> {
    let bytes = payload.as_bytes();
    if bytes.len() != 9 {
        return None;
    }
    let seq = u64::from_le_bytes(bytes[1..9].try_into().ok()?);
    Some((bytes[0], seq))
}

/// Running arithmetic mean kept as an exact (sum, count) pair so digests
/// hash canonical bits.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct MeanEstimate {
    sum: f64,
    count: u64,
}

impl MeanEstimate {
    fn push(&mut self, value: f64) {
        self.sum += value;
        self.count += 1;
    }

    fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }
}

#[derive(Debug, Clone)]
pub struct P2pNodeState {
    id: EntityId,
    neighbors: Vec<EntityId>,
    latency_estimates: BTreeMap<EntityId, MeanEstimate>,
    pending_pings: BTreeMap<u64, Timestep>,
    next_ping_seq: u64,
}

impl P2pNodeState {
    pub fn neighbors(&self) -> &[EntityId] {
        &self.neighbors
    }

    /// Mean estimated one-way latency toward `node`, in steps.
    pub fn latency_estimate(&self, node: EntityId) -> Option<f64> {
        self.latency_estimates.get(&node).map(MeanEstimate::mean)
    }

    pub fn pending_pings(&self) -> usize {
        self.pending_pings.len()
    }
}

/// The node behavior plus the shared immutable overlay.
#[derive(Debug, Clone)]
pub struct P2pModel {
    params: P2pParams,
    overlay: OverlayGraph,
}

impl P2pModel {
    /// Build the model for `n` nodes. The overlay is derived from the
    /// master seed, so every run over the same seed sees the same graph.
    pub fn new(n: u32, params: P2pParams, master_seed: u64) -> Result<Self, OverlayError> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derived_seed(
            master_seed,
            seed_domain::OVERLAY,
        ));
        let overlay = build_overlay(n, params.out_degree, &mut rng)?;
        Ok(P2pModel { params, overlay })
    }

    pub fn from_overlay(params: P2pParams, overlay: OverlayGraph) -> Self {
        P2pModel { params, overlay }
    }

    pub fn overlay(&self) -> &OverlayGraph {
        &self.overlay
    }

    fn pick_target(&self, state: &P2pNodeState, rng: &mut EntityRng) -> EntityId {
        let n = self.overlay.n;
        let d = state.neighbors.len() as u32;
        let non_neighbors = n - d - 1;
        let use_neighbor = non_neighbors == 0 || rng.random_bool(self.params.neighbor_prob);
        if use_neighbor {
            state.neighbors[rng.random_range(0..state.neighbors.len())]
        } else {
            // Uniform over all nodes excluding self and out-neighbors.
            let mut excluded: Vec<u32> = state.neighbors.iter().map(|e| e.0).collect();
            excluded.push(state.id.0);
            excluded.sort_unstable();
            let mut candidate = rng.random_range(0..non_neighbors);
            for &e in &excluded {
                if candidate >= e {
                    candidate += 1;
                }
            }
            EntityId(candidate)
        }
    }

    /// Replace the worst-estimated current neighbor with the best-
    /// estimated known non-neighbor, when the swap improves latency.
    fn refresh_neighbors(&self, state: &mut P2pNodeState) {
        let worst = state
            .neighbors
            .iter()
            .enumerate()
            .filter_map(|(i, id)| state.latency_estimates.get(id).map(|e| (i, *id, e.mean())))
            .max_by(|a, b| a.2.total_cmp(&b.2).then(a.1.cmp(&b.1)));
        let Some((worst_idx, _, worst_mean)) = worst else { return };

        let best = state
            .latency_estimates
            .iter()
            .filter(|(id, _)| **id != state.id && !state.neighbors.contains(id))
            .map(|(id, e)| (*id, e.mean()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let Some((best_id, best_mean)) = best else { return };

        if best_mean < worst_mean {
            state.neighbors[worst_idx] = best_id;
        }
    }
}

impl EntityBehavior for P2pModel {
    type State = P2pNodeState;

    fn on_init(&self, id: EntityId, _seed: u64) -> P2pNodeState {
        P2pNodeState {
            id,
            neighbors: self.overlay.neighbors(id).to_vec(),
            latency_estimates: BTreeMap::new(),
            pending_pings: BTreeMap::new(),
            next_ping_seq: 0,
        }
    }

    fn on_step(
        &self,
        state: &mut P2pNodeState,
        step: Timestep,
        rng: &mut EntityRng,
    ) -> Vec<OutboundSend> {
        let mut sends = Vec::new();
        if self.params.ping_period > 0 && step.0.is_multiple_of(self.params.ping_period) {
            let target = self.pick_target(state, rng);
            let seq = state.next_ping_seq;
            state.next_ping_seq += 1;
            state.pending_pings.insert(seq, step);
            let delay = sample_latency_steps(&self.params.latency, rng);
            sends.push(OutboundSend::new(target, encode(TAG_PING, seq), delay));
        }
        if self.params.refresh_period > 0 && step.0 > 0 && step.0.is_multiple_of(self.params.refresh_period)
        {
            self.refresh_neighbors(state);
        }
        sends
    }

    fn on_message(
        &self,
        state: &mut P2pNodeState,
        src: EntityId,
        payload: &Payload,
        step: Timestep,
        rng: &mut EntityRng,
    ) -> Vec<OutboundSend> {
        let Some((tag, seq)) = decode(payload) else {
            // Unparseable payloads (possible only past the fault-masking
            // threshold) are ignored; the node cannot act on garbage.
            return Vec::new();
        };
        match tag {
            TAG_PING => {
                let delay = sample_latency_steps(&self.params.latency, rng);
                vec![OutboundSend::new(src, encode(TAG_PONG, seq), delay)]
            }
            TAG_PONG => {
                if let Some(sent) = state.pending_pings.remove(&seq) {
                    let round_trip = step.0 - sent.0;
                    state
                        .latency_estimates
                        .entry(src)
                        .or_default()
                        .push(round_trip as f64 / 2.0);
                }
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    fn state_digest(&self, state: &P2pNodeState) -> crate::domain::Digest {
        let mut h = DigestHasher::new();
        h.update_u32(state.id.0);
        h.update_u64(state.neighbors.len() as u64);
        for n in &state.neighbors {
            h.update_u32(n.0);
        }
        h.update_u64(state.latency_estimates.len() as u64);
        for (id, e) in &state.latency_estimates {
            h.update_u32(id.0);
            h.update_f64(e.sum);
            h.update_u64(e.count);
        }
        h.update_u64(state.pending_pings.len() as u64);
        for (seq, step) in &state.pending_pings {
            h.update_u64(*seq);
            h.update_u64(step.0);
        }
        h.update_u64(state.next_ping_seq);
        h.finalize()
    }
}
