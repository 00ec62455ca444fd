//! Event-driven simulation kernel.
//!
//! The engine keeps a single queue of timestamped events, each bound to
//! exactly one component. Pop order is the total order `(time, handler,
//! seq)`, which makes serial execution deterministic and gives the
//! parallel runner a provable equivalence target: all events sharing the
//! minimal timestamp are partitioned by handler component, the groups run
//! concurrently, and a barrier separates timestamps. Handlers defer all
//! side effects (new events, request sends, metric counts) into a
//! per-group output buffer that the coordinator drains in handler-id
//! order, so sequence numbers, hook invocations, and metric updates are
//! identical for any worker count.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::sync::Mutex;

use crate::fabric::{ConnKind, OutPort, PortId, Request, SendResult, Topology};

/// Simulated time in core-clock cycles (1 cycle = 1 ns at 1.0 GHz).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct VirtualTime(pub u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);

    #[must_use]
    pub fn plus(self, cycles: u64) -> VirtualTime {
        VirtualTime(self.0 + cycles)
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identifies one registered component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComponentId(pub u32);

/// Event payloads understood by the shipped components.
#[derive(Debug)]
pub enum EventKind {
    /// Generic "advance your pipeline" tick.
    Tick,
    /// A component-private timer; the tag is opaque to the engine.
    Timer(u64),
    /// A request arriving at a port of the handling component.
    Deliver { port: PortId, req: Request },
    /// A send credit coming back to the owner of `port`. Doubles as the
    /// connection-availability notification: a sender that was rejected
    /// retries when this arrives instead of polling every cycle.
    CreditReturn { port: PortId },
    /// A request entering a shared bus for arbitration.
    BusArrival { req: Request },
    /// Kicks off the driver's command list.
    DriverStart,
    /// Free-form payload for tests and benches.
    User(u64),
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Tick => "tick",
            EventKind::Timer(_) => "timer",
            EventKind::Deliver { .. } => "deliver",
            EventKind::CreditReturn { .. } => "credit_return",
            EventKind::BusArrival { .. } => "bus_arrival",
            EventKind::DriverStart => "driver_start",
            EventKind::User(_) => "user",
        }
    }
}

/// A timestamped state-update notice bound to one component handler.
#[derive(Debug)]
pub struct Event {
    pub time: VirtualTime,
    pub handler: ComponentId,
    pub seq: u64,
    pub kind: EventKind,
}

/// Lifecycle points a hook can observe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookPos {
    BeforeEvent,
    AfterEvent,
    RequestSend,
    RequestReceive,
}

/// What a hook sees at one lifecycle point. Metric hooks read this and
/// accumulate side state of their own; they never mutate component state.
pub enum HookInfo<'a> {
    Event {
        kind: &'static str,
    },
    EventDone {
        kind: &'static str,
        counts: &'a [(&'static str, u64)],
    },
    Request {
        conn: crate::fabric::ConnectionId,
        kind: &'static str,
        bytes: u64,
    },
}

pub trait Hook: Send {
    fn observe(&mut self, pos: HookPos, time: VirtualTime, subject: ComponentId, info: &HookInfo);
}

/// A simulated entity. All mutable state lives behind `handle`; the
/// engine guarantees no two workers ever run handlers of the same
/// component simultaneously.
pub trait Component: Send {
    fn handle(&mut self, time: VirtualTime, kind: EventKind, ctx: &mut Ctx);
}

/// Deferred side effects of handling one event.
#[derive(Default)]
struct EventOutput {
    kind_name: &'static str,
    scheduled: Vec<(VirtualTime, ComponentId, EventKind)>,
    sends: Vec<SendRecord>,
    counts: Vec<(&'static str, u64)>,
}

struct SendRecord {
    conn: crate::fabric::ConnectionId,
    src_owner: ComponentId,
    kind: &'static str,
    bytes: u64,
}

/// Handler-side view of the engine: schedule events, send requests,
/// record metric counts. Everything is buffered and applied by the
/// coordinator after the barrier, in deterministic order.
pub struct Ctx<'a> {
    pub time: VirtualTime,
    pub self_id: ComponentId,
    pub topo: &'a Topology,
    out: &'a mut EventOutput,
}

impl<'a> Ctx<'a> {
    /// Schedule an event for the handling component itself.
    pub fn schedule_self(&mut self, delay: u64, kind: EventKind) {
        self.out.scheduled.push((self.time.plus(delay), self.self_id, kind));
    }

    /// Schedule an event for an arbitrary component. Reserved for fabric
    /// machinery (connections, buses); model components schedule only to
    /// themselves and communicate through requests.
    pub fn schedule_at(&mut self, target: ComponentId, time: VirtualTime, kind: EventKind) {
        assert!(
            time >= self.time,
            "component {:?} scheduled into the past: {} < {}",
            self.self_id,
            time,
            self.time
        );
        self.out.scheduled.push((time, target, kind));
    }

    /// Send a request out of `port`. Returns `RejectedBusy` when the
    /// sender holds no credit for the connection, in which case the
    /// request is handed back and the sender will be woken by a
    /// `CreditReturn` event when the connection frees.
    pub fn send(&mut self, port: &mut OutPort, mut req: Request) -> SendResult {
        if port.credits == 0 {
            return SendResult::RejectedBusy(req);
        }
        let info = self.topo.port(port.id);
        assert!(
            info.owner == self.self_id,
            "port {:?} sent from non-owner {:?}",
            port.id,
            self.self_id
        );
        req.src = port.id;
        req.send_time = self.time;
        port.credits -= 1;
        let conn = info.conn;
        match self.topo.conn(conn) {
            ConnKind::Direct { a, b, latency } => {
                let peer = if *a == port.id { *b } else { *a };
                req.dst = peer;
                self.out.sends.push(SendRecord {
                    conn,
                    src_owner: self.self_id,
                    kind: req.kind.name(),
                    bytes: req.byte_size(),
                });
                let owner = self.topo.port(peer).owner;
                let at = self.time.plus(*latency);
                self.out
                    .scheduled
                    .push((at, owner, EventKind::Deliver { port: peer, req }));
            }
            ConnKind::Bus { component, .. } => {
                assert!(
                    self.topo.port(req.dst).conn == conn,
                    "bus send with dst port not on the same bus"
                );
                self.out.sends.push(SendRecord {
                    conn,
                    src_owner: self.self_id,
                    kind: req.kind.name(),
                    bytes: req.byte_size(),
                });
                self.out
                    .scheduled
                    .push((self.time, *component, EventKind::BusArrival { req }));
            }
        }
        SendResult::Accepted
    }

    /// Return the send credit for a retrieved request. Called by `InPort`;
    /// bus egress credits are returned by the bus itself at delivery.
    pub(crate) fn return_credit(&mut self, src_port: PortId) {
        let info = self.topo.port(src_port);
        if let ConnKind::Direct { .. } = self.topo.conn(info.conn) {
            self.out.scheduled.push((
                self.time.plus(1),
                info.owner,
                EventKind::CreditReturn { port: src_port },
            ));
        }
    }

    /// Record a metric delta attributed to this component. Deltas are
    /// surfaced to after-event hooks; the engine itself never interprets
    /// them.
    pub fn count(&mut self, metric: &'static str, delta: u64) {
        if delta > 0 {
            self.out.counts.push((metric, delta));
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("event scheduled into the past: {event} < engine time {now}")]
    SchedulePast { event: VirtualTime, now: VirtualTime },
    #[error("hook registration while the engine is running")]
    HookWhileRunning,
    #[error("unknown component {0:?}")]
    UnknownComponent(ComponentId),
}

struct QueuedEvent {
    time: VirtualTime,
    handler: ComponentId,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for QueuedEvent {}
impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueuedEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}
impl QueuedEvent {
    fn key(&self) -> (VirtualTime, ComponentId, u64) {
        (self.time, self.handler, self.seq)
    }
}

/// The simulation engine: component registry, event queue, hooks, and
/// the serial/parallel runners.
pub struct Engine {
    components: Vec<Mutex<Box<dyn Component>>>,
    names: Vec<String>,
    queue: BinaryHeap<Reverse<QueuedEvent>>,
    time: VirtualTime,
    seq: u64,
    hooks: Vec<(HookPos, Box<dyn Hook>)>,
    topo: Topology,
    running: bool,
    events_scheduled: u64,
    events_handled: u64,
}

impl Engine {
    pub fn new(topo: Topology) -> Engine {
        Engine {
            components: Vec::new(),
            names: Vec::new(),
            queue: BinaryHeap::new(),
            time: VirtualTime::ZERO,
            seq: 0,
            hooks: Vec::new(),
            topo,
            running: false,
            events_scheduled: 0,
            events_handled: 0,
        }
    }

    /// Register a component under `id` (ids are handed out by the
    /// platform builder in registration order).
    pub fn register(&mut self, name: impl Into<String>, comp: Box<dyn Component>) -> ComponentId {
        let id = ComponentId(self.components.len() as u32);
        self.components.push(Mutex::new(comp));
        self.names.push(name.into());
        id
    }

    pub fn component_name(&self, id: ComponentId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn now(&self) -> VirtualTime {
        self.time
    }

    pub fn events_scheduled(&self) -> u64 {
        self.events_scheduled
    }

    pub fn events_handled(&self) -> u64 {
        self.events_handled
    }

    /// Schedule an event from outside any handler (initial stimulus).
    pub fn schedule(
        &mut self,
        time: VirtualTime,
        handler: ComponentId,
        kind: EventKind,
    ) -> Result<(), EngineError> {
        if time < self.time {
            return Err(EngineError::SchedulePast { event: time, now: self.time });
        }
        if handler.0 as usize >= self.components.len() {
            return Err(EngineError::UnknownComponent(handler));
        }
        self.push(time, handler, kind);
        Ok(())
    }

    fn push(&mut self, time: VirtualTime, handler: ComponentId, kind: EventKind) {
        assert!(
            time >= self.time,
            "event scheduled into the past: {} < {}",
            time,
            self.time
        );
        let seq = self.seq;
        self.seq += 1;
        self.events_scheduled += 1;
        self.queue.push(Reverse(QueuedEvent { time, handler, seq, kind }));
    }

    pub fn register_hook(
        &mut self,
        pos: HookPos,
        hook: Box<dyn Hook>,
    ) -> Result<(), EngineError> {
        if self.running {
            return Err(EngineError::HookWhileRunning);
        }
        self.hooks.push((pos, hook));
        Ok(())
    }

    fn fire_hooks(&mut self, pos: HookPos, subject: ComponentId, info: &HookInfo) {
        let time = self.time;
        for (p, hook) in &mut self.hooks {
            if *p == pos {
                hook.observe(pos, time, subject, info);
            }
        }
    }

    /// Run all events in `(time, handler, seq)` order on the calling
    /// thread. Returns the final simulated time.
    pub fn run_serial(&mut self) -> VirtualTime {
        self.run_inner(None)
    }

    /// Run with `workers` threads. Events sharing the minimal timestamp
    /// are partitioned by handler component and executed concurrently;
    /// final state is identical to `run_serial` for any worker count.
    pub fn run_parallel(&mut self, workers: usize) -> VirtualTime {
        assert!(workers >= 1, "workers must be >= 1");
        if workers == 1 {
            return self.run_inner(None);
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("failed to build worker pool");
        self.run_inner(Some(&pool))
    }

    fn run_inner(&mut self, pool: Option<&rayon::ThreadPool>) -> VirtualTime {
        self.running = true;
        while let Some(Reverse(head)) = self.queue.peek() {
            let t = head.time;
            debug_assert!(t >= self.time);
            self.time = t;

            // Collect the batch for this timestamp, grouped by handler.
            // Pop order is already (handler, seq) within the timestamp.
            let mut groups: Vec<(ComponentId, Vec<QueuedEvent>)> = Vec::new();
            while let Some(Reverse(head)) = self.queue.peek() {
                if head.time != t {
                    break;
                }
                let Reverse(ev) = self.queue.pop().unwrap();
                match groups.last_mut() {
                    Some((h, evs)) if *h == ev.handler => evs.push(ev),
                    _ => groups.push((ev.handler, vec![ev])),
                }
            }

            for (handler, evs) in &groups {
                for ev in evs {
                    let info = HookInfo::Event { kind: ev.kind.name() };
                    self.fire_hooks(HookPos::BeforeEvent, *handler, &info);
                    if let EventKind::Deliver { req, .. } = &ev.kind {
                        let conn = self.topo.port(req.dst).conn;
                        let info = HookInfo::Request {
                            conn,
                            kind: req.kind.name(),
                            bytes: req.byte_size(),
                        };
                        self.fire_hooks(HookPos::RequestReceive, *handler, &info);
                    }
                }
            }

            let outputs = self.execute_groups(groups, pool);
            self.drain(outputs);
        }
        self.running = false;
        self.time
    }

    fn execute_groups(
        &mut self,
        groups: Vec<(ComponentId, Vec<QueuedEvent>)>,
        pool: Option<&rayon::ThreadPool>,
    ) -> Vec<(ComponentId, Vec<EventOutput>)> {
        let components = &self.components;
        let topo = &self.topo;
        let time = self.time;
        let run_group = |(handler, evs): (ComponentId, Vec<QueuedEvent>)| {
            // try_lock doubles as the handler-exclusivity assertion: the
            // batch is partitioned by component, so contention here is a
            // scheduler bug.
            let mut comp = components[handler.0 as usize]
                .try_lock()
                .expect("component handler entered concurrently");
            let outs = evs
                .into_iter()
                .map(|ev| {
                    let mut out = EventOutput {
                        kind_name: ev.kind.name(),
                        ..EventOutput::default()
                    };
                    let mut ctx = Ctx { time, self_id: handler, topo, out: &mut out };
                    comp.handle(time, ev.kind, &mut ctx);
                    out
                })
                .collect::<Vec<_>>();
            (handler, outs)
        };
        match pool {
            None => groups.into_iter().map(run_group).collect(),
            Some(pool) => pool.install(|| {
                use rayon::prelude::*;
                groups.into_par_iter().map(run_group).collect()
            }),
        }
    }

    fn drain(&mut self, outputs: Vec<(ComponentId, Vec<EventOutput>)>) {
        for (handler, outs) in outputs {
            for out in outs {
                self.events_handled += 1;
                for (time, target, kind) in out.scheduled {
                    self.push(time, target, kind);
                }
                for send in &out.sends {
                    let info = HookInfo::Request {
                        conn: send.conn,
                        kind: send.kind,
                        bytes: send.bytes,
                    };
                    self.fire_hooks(HookPos::RequestSend, send.src_owner, &info);
                }
                let info = HookInfo::EventDone { kind: out.kind_name, counts: &out.counts };
                self.fire_hooks(HookPos::AfterEvent, handler, &info);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::TopologyBuilder;
    use std::sync::atomic::{AtomicU64, Ordering};
    use std::sync::Arc;

    struct Recorder {
        log: Arc<Mutex<Vec<(u64, u32, u64)>>>,
    }
    impl Component for Recorder {
        fn handle(&mut self, time: VirtualTime, kind: EventKind, ctx: &mut Ctx) {
            if let EventKind::User(v) = kind {
                self.log.lock().unwrap().push((time.0, ctx.self_id.0, v));
            }
        }
    }

    fn recorder_engine(n: usize) -> (Engine, Arc<Mutex<Vec<(u64, u32, u64)>>>) {
        let log = Arc::new(Mutex::new(Vec::new()));
        let mut eng = Engine::new(TopologyBuilder::new().build());
        for i in 0..n {
            eng.register(format!("c{i}"), Box::new(Recorder { log: log.clone() }));
        }
        (eng, log)
    }

    #[test]
    fn empty_queue_returns_zero() {
        let (mut eng, _) = recorder_engine(1);
        assert_eq!(eng.run_serial(), VirtualTime(0));
    }

    #[test]
    fn single_event_handled_at_its_time() {
        let (mut eng, log) = recorder_engine(1);
        eng.schedule(VirtualTime(100), ComponentId(0), EventKind::User(7)).unwrap();
        assert_eq!(eng.run_serial(), VirtualTime(100));
        assert_eq!(*log.lock().unwrap(), vec![(100, 0, 7)]);
    }

    #[test]
    fn same_time_events_handled_in_seq_order() {
        let (mut eng, log) = recorder_engine(1);
        eng.schedule(VirtualTime(100), ComponentId(0), EventKind::User(5)).unwrap();
        eng.schedule(VirtualTime(100), ComponentId(0), EventKind::User(7)).unwrap();
        eng.run_serial();
        assert_eq!(*log.lock().unwrap(), vec![(100, 0, 5), (100, 0, 7)]);
    }

    #[test]
    fn pop_order_is_time_then_handler() {
        let (mut eng, log) = recorder_engine(2);
        eng.schedule(VirtualTime(2), ComponentId(1), EventKind::User(1)).unwrap();
        eng.schedule(VirtualTime(2), ComponentId(0), EventKind::User(2)).unwrap();
        eng.schedule(VirtualTime(1), ComponentId(1), EventKind::User(3)).unwrap();
        assert_eq!(eng.run_serial(), VirtualTime(2));
        assert_eq!(
            *log.lock().unwrap(),
            vec![(1, 1, 3), (2, 0, 2), (2, 1, 1)]
        );
    }

    #[test]
    fn scheduling_into_the_past_is_an_error() {
        struct Late;
        impl Component for Late {
            fn handle(&mut self, _t: VirtualTime, _k: EventKind, _ctx: &mut Ctx) {}
        }
        let mut eng = Engine::new(TopologyBuilder::new().build());
        let id = eng.register("late", Box::new(Late));
        eng.schedule(VirtualTime(60), id, EventKind::User(0)).unwrap();
        eng.run_serial();
        let err = eng.schedule(VirtualTime(50), id, EventKind::User(1));
        assert!(matches!(err, Err(EngineError::SchedulePast { .. })));
    }

    struct CountHook(Arc<AtomicU64>);
    impl Hook for CountHook {
        fn observe(&mut self, _p: HookPos, _t: VirtualTime, _s: ComponentId, _i: &HookInfo) {
            self.0.fetch_add(1, Ordering::Relaxed);
        }
    }

    #[test]
    fn after_event_hook_counts_every_event() {
        let (mut eng, _) = recorder_engine(1);
        let n = Arc::new(AtomicU64::new(0));
        eng.register_hook(HookPos::AfterEvent, Box::new(CountHook(n.clone()))).unwrap();
        for t in 1..=3 {
            eng.schedule(VirtualTime(t), ComponentId(0), EventKind::User(t)).unwrap();
        }
        eng.run_serial();
        assert_eq!(n.load(Ordering::Relaxed), 3);
        assert_eq!(eng.events_scheduled(), eng.events_handled());
    }

    /// Self-scheduling chain: each handled event schedules a follow-up,
    /// exercising drain-time seq assignment.
    struct Chain {
        remaining: u64,
        log: Arc<Mutex<Vec<(u64, u32)>>>,
    }
    impl Component for Chain {
        fn handle(&mut self, time: VirtualTime, _k: EventKind, ctx: &mut Ctx) {
            self.log.lock().unwrap().push((time.0, ctx.self_id.0));
            if self.remaining > 0 {
                self.remaining -= 1;
                ctx.schedule_self(1, EventKind::Tick);
            }
        }
    }

    #[test]
    fn parallel_matches_serial_for_chains() {
        let build = || {
            let log = Arc::new(Mutex::new(Vec::new()));
            let mut eng = Engine::new(TopologyBuilder::new().build());
            for i in 0..8 {
                let id = eng.register(
                    format!("chain{i}"),
                    Box::new(Chain { remaining: 50 + i, log: log.clone() }),
                );
                eng.schedule(VirtualTime(i), id, EventKind::Tick).unwrap();
            }
            (eng, log)
        };
        let (mut a, la) = build();
        let ta = a.run_serial();
        let (mut b, lb) = build();
        let tb = b.run_parallel(4);
        assert_eq!(ta, tb);
        // Worker interleaving within a timestamp is free; the event sets
        // and per-component orders must match exactly.
        let mut la = la.lock().unwrap().clone();
        let mut lb = lb.lock().unwrap().clone();
        la.sort_unstable();
        lb.sort_unstable();
        assert_eq!(la, lb);
    }
}
