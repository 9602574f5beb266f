//! Adaptive self-clustering: move each instance toward the LP that
//! receives most of its traffic, without ever co-locating sibling
//! replicas and without overloading any LP.
//!
//! Tallies are replication-unaware: each replica clusters independently.
//! The engine records tallies during fan-out and invokes [`evaluate`] at
//! the end of every observation window.

use crate::domain::{InstanceId, LpId};
use crate::replication::PlacementMap;

/// Per instance, how many physical messages it sent toward each LP over
/// the current window. Dense storage: counts reset at every evaluation.
#[derive(Debug, Clone)]
pub struct InteractionTally {
    counts: Vec<u64>, // (entity * replicas + replica) * lps + lp
    replicas: u32,
    lps: u32,
}

impl InteractionTally {
    pub fn new(entities: u32, replicas: u32, lps: u32) -> Self {
        InteractionTally {
            counts: vec![0; entities as usize * replicas as usize * lps as usize],
            replicas,
            lps,
        }
    }

    fn base(&self, inst: InstanceId) -> usize {
        (inst.entity.0 as usize * self.replicas as usize + inst.replica as usize)
            * self.lps as usize
    }

    pub fn record(&mut self, src: InstanceId, dst_lp: LpId) {
        let idx = self.base(src) + dst_lp.0 as usize;
        self.counts[idx] += 1;
    }

    /// Destination counts for one instance, indexed by LP id.
    pub fn row(&self, inst: InstanceId) -> &[u64] {
        let base = self.base(inst);
        &self.counts[base..base + self.lps as usize]
    }

    pub fn reset(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MigrationDecision {
    pub instance: InstanceId,
    pub from: LpId,
    pub to: LpId,
}

#[derive(Debug, Clone, Copy)]
pub struct MigrationPolicy {
    /// Required share of the window's sends toward the top LP (strictly
    /// greater-than).
    pub dominance_threshold: f64,
    /// Load ceiling factor over the ideal `ceil(N*M/L)` per LP.
    pub load_cap: f64,
}

/// Decide migrations for one window.
///
/// Instances are considered in ascending id order and each decision is
/// validated against the partially updated placement, so a decision never
/// creates a sibling collision or pushes an LP past the load cap even
/// when several instances target the same LP in one window. Crashed or
/// Byzantine LPs neither donate nor receive instances.
pub fn evaluate(
    tally: &InteractionTally,
    placement: &PlacementMap,
    policy: &MigrationPolicy,
    lp_running: &[bool],
) -> Vec<MigrationDecision> {
    debug_assert_eq!(lp_running.len(), placement.lps() as usize);
    let ideal = (placement.instance_count() as u64).div_ceil(placement.lps() as u64);
    let cap = policy.load_cap * ideal as f64;

    let mut working = placement.clone();
    let mut loads = placement.load_per_lp();
    let mut decisions = Vec::new();

    for (inst, current) in placement.iter() {
        if !lp_running[current.0 as usize] {
            continue;
        }
        let row = tally.row(inst);
        let total: u64 = row.iter().sum();
        if total == 0 {
            continue;
        }
        // First maximum wins, so ties break toward the lowest LP id.
        let (top_lp, top_count) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(lp, &count)| (LpId(lp as u32), count))
            .expect("tally rows are non-empty");
        if top_lp == current {
            continue;
        }
        if (top_count as f64) <= policy.dominance_threshold * total as f64 {
            continue;
        }
        if !lp_running[top_lp.0 as usize] {
            continue;
        }
        if working.hosts_sibling(inst.entity, top_lp, inst.replica) {
            continue;
        }
        if (loads[top_lp.0 as usize] + 1) as f64 > cap {
            continue;
        }
        working.reassign(inst, top_lp);
        loads[top_lp.0 as usize] += 1;
        loads[current.0 as usize] -= 1;
        decisions.push(MigrationDecision { instance: inst, from: current, to: top_lp });
    }
    decisions
}
