//! Metric collection via engine hooks.
//!
//! Components report counters through `Ctx::count`; the engine surfaces
//! them to after-event hooks together with every request send. The
//! [`Metrics`] hook aggregates:
//!
//! * counter totals per (component, metric);
//! * bytes and request counts per connection (PCIe traffic is read off
//!   the bus connection);
//! * kernel launch/completion timestamps, reconstructed from the
//!   driver's `kernel_launch_mark` / `kernel_done_mark` counters whose
//!   delta encodes `launch id + 1`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::engine::{ComponentId, Hook, HookInfo, HookPos, VirtualTime};
use crate::fabric::ConnectionId;
use crate::proto::LaunchId;

#[derive(Debug, Default)]
pub struct MetricsState {
    /// Counter totals keyed by (component, metric).
    pub counters: HashMap<(ComponentId, &'static str), u64>,
    /// Total bytes moved per connection (counted at send).
    pub conn_bytes: HashMap<ConnectionId, u64>,
    /// Requests sent per connection.
    pub conn_requests: HashMap<ConnectionId, u64>,
    /// Launch id -> (launch time, completion time).
    pub launches: HashMap<LaunchId, (VirtualTime, Option<VirtualTime>)>,
}

impl MetricsState {
    /// Sum a counter over all components.
    pub fn total(&self, metric: &str) -> u64 {
        self.counters
            .iter()
            .filter(|((_, m), _)| *m == metric)
            .map(|(_, v)| v)
            .sum()
    }

    pub fn counter(&self, component: ComponentId, metric: &str) -> u64 {
        self.counters
            .iter()
            .find(|((c, m), _)| *c == component && *m == metric)
            .map_or(0, |(_, v)| *v)
    }

    pub fn bytes_on(&self, conn: Option<ConnectionId>) -> u64 {
        conn.and_then(|c| self.conn_bytes.get(&c)).copied().unwrap_or(0)
    }

    /// Cycles from launch to completion of one kernel.
    pub fn kernel_cycles(&self, id: LaunchId) -> Option<u64> {
        let (start, done) = self.launches.get(&id)?;
        done.map(|d| d.0 - start.0)
    }

    /// Launch-to-completion span over all kernels (first launch to last
    /// completion).
    pub fn kernel_span(&self) -> Option<(VirtualTime, VirtualTime)> {
        let first = self.launches.values().map(|(s, _)| *s).min()?;
        let last = self.launches.values().filter_map(|(_, d)| *d).max()?;
        Some((first, last))
    }
}

/// The shared handle: clone it, register [`Metrics::hooks`] on an
/// engine, read the state after the run.
#[derive(Clone, Default)]
pub struct Metrics {
    state: Arc<Mutex<MetricsState>>,
}

impl Metrics {
    pub fn new() -> Metrics {
        Metrics::default()
    }

    pub fn state(&self) -> std::sync::MutexGuard<'_, MetricsState> {
        self.state.lock().unwrap()
    }

    /// The hooks to register: one on `AfterEvent` (counters, launch
    /// marks), one on `RequestSend` (per-connection traffic).
    pub fn hooks(&self) -> Vec<(HookPos, Box<dyn Hook>)> {
        vec![
            (HookPos::AfterEvent, Box::new(CounterHook { state: self.state.clone() })),
            (HookPos::RequestSend, Box::new(TrafficHook { state: self.state.clone() })),
        ]
    }
}

struct CounterHook {
    state: Arc<Mutex<MetricsState>>,
}

impl Hook for CounterHook {
    fn observe(&mut self, _pos: HookPos, time: VirtualTime, subject: ComponentId, info: &HookInfo) {
        let HookInfo::EventDone { counts, .. } = info else { return };
        if counts.is_empty() {
            return;
        }
        let mut st = self.state.lock().unwrap();
        for &(metric, delta) in *counts {
            match metric {
                "kernel_launch_mark" => {
                    let id = delta - 1;
                    st.launches.entry(id).or_insert((time, None));
                }
                "kernel_done_mark" => {
                    let id = delta - 1;
                    let entry = st.launches.get_mut(&id).expect("completion of unknown launch");
                    entry.1 = Some(time);
                }
                _ => *st.counters.entry((subject, metric)).or_insert(0) += delta,
            }
        }
    }
}

struct TrafficHook {
    state: Arc<Mutex<MetricsState>>,
}

impl Hook for TrafficHook {
    fn observe(&mut self, _pos: HookPos, _time: VirtualTime, _subject: ComponentId, info: &HookInfo) {
        let HookInfo::Request { conn, bytes, .. } = info else { return };
        let mut st = self.state.lock().unwrap();
        *st.conn_bytes.entry(*conn).or_insert(0) += bytes;
        *st.conn_requests.entry(*conn).or_insert(0) += 1;
    }
}
