//! Structured run events. The engine reports them in a deterministic
//! order (coordinator events first, then per-LP events in ascending LP
//! id) so event logs are comparable across runs and worker counts.

use serde::Serialize;

/// One event record: (step, lp, kind). `lp` is absent for coordinator
/// events such as run completion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEvent {
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lp: Option<u32>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    LpCrashed,
    LpTurnedByzantine {
        mode: String,
    },
    /// A payload was handed to a destination instance after filtering.
    /// High volume; only reported when the sink asks for deliveries.
    Delivery {
        dst_entity: u32,
        dst_replica: u32,
        src_entity: u32,
        seq: u64,
        digest: String,
        voted: bool,
    },
    /// A Byzantine LP rewrote one outbound copy. Reported with the same
    /// gating as deliveries; together they let an audit prove that no
    /// corrupted digest was ever delivered as agreed.
    CorruptedCopy {
        src_entity: u32,
        src_replica: u32,
        dst_entity: u32,
        dst_replica: u32,
        seq: u64,
        deliver_step: u64,
        digest: String,
    },
    MigrationCommitted {
        entity: u32,
        replica: u32,
        from: u32,
        to: u32,
    },
    /// End-of-window summary after the migration barrier.
    MigrationWindow {
        decisions: u64,
        constraint_ok: bool,
    },
    RunFinished {
        completed: bool,
    },
}

/// Receiver for engine events. Called only from the barrier (never from
/// worker threads), in a deterministic order.
pub trait EventSink {
    /// Delivery events are one per processed payload; sinks that do not
    /// need them keep the fast path allocation-free by returning false.
    fn wants_deliveries(&self) -> bool {
        false
    }

    fn record(&mut self, event: SimEvent);
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullSink;

impl EventSink for NullSink {
    fn record(&mut self, _event: SimEvent) {}
}

/// Buffers every event in memory; used by tests and audits.
#[derive(Debug, Default)]
pub struct CollectingSink {
    pub with_deliveries: bool,
    pub events: Vec<SimEvent>,
}

impl CollectingSink {
    pub fn new(with_deliveries: bool) -> Self {
        CollectingSink { with_deliveries, events: Vec::new() }
    }
}

impl EventSink for CollectingSink {
    fn wants_deliveries(&self) -> bool {
        self.with_deliveries
    }

    fn record(&mut self, event: SimEvent) {
        self.events.push(event);
    }
}
