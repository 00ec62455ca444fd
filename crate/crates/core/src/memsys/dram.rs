//! Fixed-latency DRAM bank controller.
//!
//! Data lives in a system-wide [`SparseMemory`] shared (behind a mutex)
//! with the driver and the functional emulator; the controller contributes
//! timing — a fixed access latency plus per-bank serialization — and the
//! guarantee that a read returns exactly the bytes last written.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use crate::engine::{Component, Ctx, EventKind, VirtualTime};
use crate::fabric::{Endpoint, IdGen, ReqKind, Request, LINE_BYTES};
use crate::memsys::SparseMemory;

#[derive(Debug, Clone, Copy)]
pub struct DramParams {
    /// Cycles from (serialized) service start to the reply leaving.
    pub latency: u64,
    /// Cycles one request occupies the bank; back-to-back same-bank
    /// replies are separated by at least this.
    pub service_cycles: u64,
    pub capacity_bytes: u64,
}

pub struct DramController {
    port: Endpoint,
    ids: IdGen,
    params: DramParams,
    store: Arc<Mutex<SparseMemory>>,
    busy_until: VirtualTime,
    /// Replies in flight, ordered by due time (appends are monotonic).
    pending: VecDeque<(VirtualTime, Request)>,
}

impl DramController {
    pub fn new(
        port: Endpoint,
        ids: IdGen,
        params: DramParams,
        store: Arc<Mutex<SparseMemory>>,
    ) -> DramController {
        assert!(params.latency >= 1 && params.service_cycles >= 1);
        DramController { port, ids, params, store, busy_until: VirtualTime::ZERO, pending: VecDeque::new() }
    }

    fn serve(&mut self, now: VirtualTime, req: Request, ctx: &mut Ctx) {
        let start = self.busy_until.max(now);
        self.busy_until = start.plus(self.params.service_cycles);
        ctx.count("dram_busy_cycles", self.params.service_cycles);
        let reply_kind = match req.kind {
            ReqKind::Read { addr } => {
                assert!(addr % LINE_BYTES as u64 == 0, "unaligned DRAM read {addr:#x}");
                ctx.count("dram_reads", 1);
                let mut data = Box::new([0u8; LINE_BYTES]);
                self.store.lock().unwrap().read(addr, &mut data[..]);
                ReqKind::ReadReply { addr, data }
            }
            ReqKind::Write { addr, data, mask } => {
                assert!(addr % LINE_BYTES as u64 == 0, "unaligned DRAM write {addr:#x}");
                ctx.count("dram_writes", 1);
                self.store.lock().unwrap().write_masked(addr, &data, mask);
                ReqKind::WriteAck { addr }
            }
            other => panic!("DRAM received unexpected request {}", other.name()),
        };
        let due = start.plus(self.params.latency);
        let reply = Request::new(self.ids.next(), reply_kind);
        debug_assert!(self.pending.back().is_none_or(|(t, _)| *t <= due));
        self.pending.push_back((due, reply));
        ctx.schedule_self(due.0 - now.0, EventKind::Timer(0));
    }
}

impl Component for DramController {
    fn handle(&mut self, time: VirtualTime, kind: EventKind, ctx: &mut Ctx) {
        match kind {
            EventKind::Deliver { req, .. } => {
                self.port.inp.deliver(req);
                while let Some(req) = self.port.inp.retrieve(ctx) {
                    self.serve(time, req, ctx);
                }
            }
            EventKind::Timer(_) => {
                while let Some((due, _)) = self.pending.front() {
                    if *due != time {
                        break;
                    }
                    let (_, reply) = self.pending.pop_front().unwrap();
                    self.port.out.send(ctx, reply);
                }
            }
            EventKind::CreditReturn { .. } => self.port.out.credit_returned(ctx),
            other => panic!("DRAM received unexpected event {}", other.name()),
        }
    }
}
