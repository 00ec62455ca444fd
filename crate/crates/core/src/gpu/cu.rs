//! Compute unit timing model.
//!
//! Structure per Fig.-4-style GCN: a fetch arbiter and an issue arbiter
//! (both round-robin over resident wavefronts), one decoder per
//! execution-unit class, and pipelined units. Timing rules:
//!
//! * at most one instruction in flight per wavefront;
//! * decode takes 1 cycle, register read 1, write-back 1; execute takes
//!   2 cycles for full-wavefront vector ops (64 lanes over a 32-lane
//!   SIMD) and 1 for scalar/LDS — so back-to-back vector ALU runs at
//!   exactly 5 cycles per instruction;
//! * instruction bytes must arrive before execution: each wavefront has
//!   a 2-line fetch buffer keeping the two most recently used lines, and
//!   lines are fetched on demand, so straight-line code stalls once per
//!   64-byte line for the full fetch round trip while a loop spanning at
//!   most two lines runs fetch-free after its first iteration;
//! * memory instructions generate coalesced line requests after the
//!   decode+read stages and block their wavefront until every reply is
//!   back.
//!
//! The CU only schedules wake-up events when it can make progress; when
//! every wavefront is blocked on memory it goes quiet until a delivery
//! or credit arrives.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use crate::engine::{Component, Ctx, EventKind, VirtualTime};
use crate::fabric::{Endpoint, IdGen, ReqKind, Request, LINE_BYTES};
use crate::gpu::coalesce::{coalesce, LaneSlice};
use crate::isa::{
    advance_pc, exec_alu, exec_ds, flat_accesses, flat_commit_load, ExecOutcome, Kernel, Unit,
    Wavefront,
};
use crate::proto::{Ctrl, LaunchId};

const LINE: u64 = LINE_BYTES as u64;
const UNIT_ORDER: [Unit; 4] = [Unit::Scalar, Unit::Vector, Unit::VMem, Unit::Lds];

fn unit_index(u: Unit) -> usize {
    match u {
        Unit::Scalar => 0,
        Unit::Vector => 1,
        Unit::VMem => 2,
        Unit::Lds => 3,
    }
}

/// decode(1) + read(1) + execute + write(1); VMem leaves the pipeline
/// after decode+read to generate addresses, then waits on replies.
fn depth(u: Unit) -> u64 {
    match u {
        Unit::Vector => 5,
        Unit::Scalar | Unit::Lds => 4,
        Unit::VMem => 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WfState {
    Ready,
    Executing { done_at: VirtualTime },
    WaitMem { pending: u32 },
    AtBarrier,
    Done,
}

struct WfSlot {
    wf: Wavefront,
    kernel: Arc<Kernel>,
    wg: usize,
    state: WfState,
    /// Up to two fetched instruction lines, oldest first, so a loop
    /// spanning two lines stays resident after its first iteration.
    lines: Vec<(u64, Box<[u8; LINE_BYTES]>)>,
}

impl WfSlot {
    /// The line this wavefront needs resident to make progress: the one
    /// holding pc. Fetched on demand only, so straight-line code pays
    /// the full fetch round trip once per 64-byte line.
    fn wanted(&self) -> Option<u64> {
        if matches!(self.state, WfState::Done) {
            return None;
        }
        Some(self.wf.pc & !(LINE - 1))
    }

    fn has_line(&self, addr: u64) -> bool {
        self.lines.iter().any(|(a, _)| *a == addr)
    }

    /// Decode the instruction index stored at pc from the fetched bytes.
    fn decode_current(&self) -> usize {
        let line = self.wf.pc & !(LINE - 1);
        let (_, data) = self.lines.iter().find(|(a, _)| *a == line).expect("pc line not fetched");
        let off = (self.wf.pc - line) as usize;
        let idx = u32::from_le_bytes(data[off..off + 4].try_into().unwrap()) as usize;
        assert!(
            idx == self.wf.instr_index(),
            "instruction memory corrupted: fetched index {idx}, pc expects {}",
            self.wf.instr_index()
        );
        idx
    }
}

struct ResidentWg {
    launch: LaunchId,
    wg_id: u32,
    lds_base: u32,
    lds_len: u32,
    slots: Vec<usize>,
    live: u32,
}

struct LoadWaiter {
    slot: usize,
    lanes: Vec<LaneSlice>,
}

enum QueuedMem {
    Read { addr: u64 },
    Write { addr: u64, data: Box<[u8; LINE_BYTES]>, mask: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct CuParams {
    pub wavefront_slots: u32,
    pub lds_bytes: u32,
}

pub struct ComputeUnit {
    ace: Endpoint,
    fetch: Endpoint,
    vmem: Endpoint,
    ids: IdGen,
    slots: Vec<Option<WfSlot>>,
    wgs: Vec<Option<ResidentWg>>,
    lds: Vec<u8>,
    /// Sorted (offset, len) free list.
    lds_free: Vec<(u32, u32)>,
    fetch_outstanding: HashMap<u64, ()>,
    load_waiting: HashMap<u64, VecDeque<LoadWaiter>>,
    store_waiting: HashMap<u64, VecDeque<usize>>,
    vmem_queue: VecDeque<QueuedMem>,
    rr_fetch: usize,
    rr_issue: [usize; 4],
    next_tick: Option<VirtualTime>,
}

impl ComputeUnit {
    pub fn new(params: CuParams, ace: Endpoint, fetch: Endpoint, vmem: Endpoint, ids: IdGen) -> Self {
        ComputeUnit {
            ace,
            fetch,
            vmem,
            ids,
            slots: (0..params.wavefront_slots).map(|_| None).collect(),
            wgs: Vec::new(),
            lds: vec![0u8; params.lds_bytes as usize],
            lds_free: vec![(0, params.lds_bytes)],
            fetch_outstanding: HashMap::new(),
            load_waiting: HashMap::new(),
            store_waiting: HashMap::new(),
            vmem_queue: VecDeque::new(),
            rr_fetch: 0,
            rr_issue: [0; 4],
            next_tick: None,
        }
    }

    fn wake(&mut self, now: VirtualTime, delay: u64, ctx: &mut Ctx) {
        let due = now.plus(delay);
        if self.next_tick.is_none_or(|nt| due < nt) {
            self.next_tick = Some(due);
            ctx.schedule_self(delay, EventKind::Tick);
        }
    }

    // ---- work-group residency ----

    fn lds_alloc(&mut self, len: u32) -> u32 {
        if len == 0 {
            return 0;
        }
        let pos = self
            .lds_free
            .iter()
            .position(|&(_, flen)| flen >= len)
            .expect("LDS over-subscribed: dispatcher budget violated");
        let (off, flen) = self.lds_free[pos];
        if flen == len {
            self.lds_free.remove(pos);
        } else {
            self.lds_free[pos] = (off + len, flen - len);
        }
        off
    }

    fn lds_release(&mut self, off: u32, len: u32) {
        if len == 0 {
            return;
        }
        let pos = self.lds_free.partition_point(|&(o, _)| o < off);
        self.lds_free.insert(pos, (off, len));
        // Merge neighbors.
        let mut i = pos.saturating_sub(1);
        while i + 1 < self.lds_free.len() {
            let (o, l) = self.lds_free[i];
            let (no, nl) = self.lds_free[i + 1];
            if o + l == no {
                self.lds_free[i] = (o, l + nl);
                self.lds_free.remove(i + 1);
            } else {
                i += 1;
            }
        }
    }

    fn admit_wg(&mut self, assign: crate::proto::WgAssign, ctx: &mut Ctx) {
        let spec = &assign.spec.spec;
        let items = spec.wg_items(u64::from(assign.wg));
        let wf_count = items.div_ceil(crate::isa::LANES as u32);
        let lds_len = spec.kernel.lds_bytes;
        let lds_base = self.lds_alloc(lds_len);
        let mut slot_ids = Vec::with_capacity(wf_count as usize);
        for wf_index in 0..wf_count {
            let slot = self
                .slots
                .iter()
                .position(|s| s.is_none())
                .expect("wavefront slots over-subscribed: dispatcher budget violated");
            slot_ids.push(slot);
            self.slots[slot] = Some(WfSlot {
                wf: Wavefront::for_dispatch(spec, assign.wg, wf_index),
                kernel: spec.kernel.clone(),
                wg: 0, // patched below
                state: WfState::Ready,
                lines: Vec::new(),
            });
        }
        let wg_index = match self.wgs.iter().position(|w| w.is_none()) {
            Some(i) => i,
            None => {
                self.wgs.push(None);
                self.wgs.len() - 1
            }
        };
        for &s in &slot_ids {
            self.slots[s].as_mut().unwrap().wg = wg_index;
        }
        self.wgs[wg_index] = Some(ResidentWg {
            launch: assign.launch,
            wg_id: assign.wg,
            lds_base,
            lds_len,
            slots: slot_ids,
            live: wf_count,
        });
        ctx.count("workgroups_admitted", 1);
    }

    fn complete_wg(&mut self, wg_index: usize, ctx: &mut Ctx) {
        let wg = self.wgs[wg_index].take().unwrap();
        for &s in &wg.slots {
            self.slots[s] = None;
        }
        self.lds_release(wg.lds_base, wg.lds_len);
        ctx.count("workgroups_retired", 1);
        let req = Request::new(
            self.ids.next(),
            ReqKind::Ctrl(Ctrl::WgDone { launch: wg.launch, wg: wg.wg_id }),
        );
        self.ace.out.send(ctx, req);
    }

    /// Release the barrier once every live wavefront of the group is
    /// parked at it.
    fn check_barrier(&mut self, wg_index: usize) {
        let wg = self.wgs[wg_index].as_ref().unwrap();
        let all_parked = wg.slots.iter().all(|&s| {
            matches!(
                self.slots[s].as_ref().unwrap().state,
                WfState::AtBarrier | WfState::Done
            )
        });
        if all_parked {
            let slots = wg.slots.clone();
            for s in slots {
                let slot = self.slots[s].as_mut().unwrap();
                if slot.state == WfState::AtBarrier {
                    slot.state = WfState::Ready;
                }
            }
        }
    }

    // ---- pipeline ----

    fn retire(&mut self, i: usize, ctx: &mut Ctx) {
        let slot = self.slots[i].as_mut().unwrap();
        let kernel = slot.kernel.clone();
        let inst = &kernel.instrs[slot.wf.instr_index()];
        ctx.count("instructions", 1);
        match inst.op.unit() {
            Unit::Scalar | Unit::Vector => match exec_alu(&mut slot.wf, inst) {
                ExecOutcome::Continue => slot.state = WfState::Ready,
                ExecOutcome::Barrier => {
                    slot.state = WfState::AtBarrier;
                    let wg = slot.wg;
                    self.check_barrier(wg);
                }
                ExecOutcome::End => {
                    slot.state = WfState::Done;
                    slot.lines.clear();
                    let wg_index = slot.wg;
                    let wg = self.wgs[wg_index].as_mut().unwrap();
                    wg.live -= 1;
                    if wg.live == 0 {
                        self.complete_wg(wg_index, ctx);
                    } else {
                        self.check_barrier(wg_index);
                    }
                }
            },
            Unit::Lds => {
                let wg = self.wgs[slot.wg].as_ref().unwrap();
                let base = wg.lds_base as usize;
                let len = wg.lds_len as usize;
                exec_ds(&mut slot.wf, inst, &mut self.lds[base..base + len]);
                let slot = self.slots[i].as_mut().unwrap();
                advance_pc(&mut slot.wf);
                slot.state = WfState::Ready;
            }
            Unit::VMem => {
                let accesses = flat_accesses(&slot.wf, inst);
                assert!(!accesses.is_empty(), "memory instruction with no active lanes");
                let reqs = coalesce(&accesses);
                let pending = reqs.len() as u32;
                for r in reqs {
                    match r.store {
                        Some((data, mask)) => {
                            ctx.count("vmem_writes", 1);
                            self.store_waiting.entry(r.addr).or_default().push_back(i);
                            self.vmem_queue.push_back(QueuedMem::Write { addr: r.addr, data, mask });
                        }
                        None => {
                            ctx.count("vmem_reads", 1);
                            self.load_waiting
                                .entry(r.addr)
                                .or_default()
                                .push_back(LoadWaiter { slot: i, lanes: r.lanes });
                            self.vmem_queue.push_back(QueuedMem::Read { addr: r.addr });
                        }
                    }
                }
                self.slots[i].as_mut().unwrap().state = WfState::WaitMem { pending };
            }
        }
    }

    fn issuable(&self, i: usize, unit: Unit) -> bool {
        let Some(slot) = self.slots[i].as_ref() else { return false };
        if slot.state != WfState::Ready {
            return false;
        }
        let line = slot.wf.pc & !(LINE - 1);
        if !slot.has_line(line) {
            return false;
        }
        slot.kernel.instrs[slot.wf.instr_index()].op.unit() == unit
    }

    fn tick(&mut self, now: VirtualTime, ctx: &mut Ctx) {
        if self.next_tick == Some(now) {
            self.next_tick = None;
        }
        // 1. Retire instructions completing this cycle.
        for i in 0..self.slots.len() {
            let due = matches!(
                self.slots[i].as_ref().map(|s| s.state),
                Some(WfState::Executing { done_at }) if done_at == now
            );
            if due {
                self.retire(i, ctx);
            }
        }
        // 2. Issue: one instruction per decoder class, round-robin.
        for unit in UNIT_ORDER {
            let u = unit_index(unit);
            let n = self.slots.len();
            let grant = (0..n).map(|k| (self.rr_issue[u] + k) % n).find(|&i| self.issuable(i, unit));
            if let Some(i) = grant {
                self.rr_issue[u] = (i + 1) % n;
                let slot = self.slots[i].as_mut().unwrap();
                let idx = slot.decode_current();
                debug_assert_eq!(idx, slot.wf.instr_index());
                slot.state = WfState::Executing { done_at: now.plus(depth(unit)) };
            }
        }
        // 3. Fetch arbiter: one instruction-line fetch per cycle.
        if self.fetch.out.is_idle() {
            if let Some((granted, line)) = self.next_fetch_line() {
                self.rr_fetch = (granted + 1) % self.slots.len();
                self.fetch_outstanding.insert(line, ());
                ctx.count("ifetches", 1);
                let req = Request::new(self.ids.next(), ReqKind::Read { addr: line });
                self.fetch.out.send(ctx, req);
            }
        }
        // 4. Data-path: one memory request per cycle.
        if self.vmem.out.is_idle() {
            if let Some(q) = self.vmem_queue.pop_front() {
                let kind = match q {
                    QueuedMem::Read { addr } => ReqKind::Read { addr },
                    QueuedMem::Write { addr, data, mask } => ReqKind::Write { addr, data, mask },
                };
                self.vmem.out.send(ctx, Request::new(self.ids.next(), kind));
            }
        }
        // 5. Plan the next wake-up.
        let mut next: Option<VirtualTime> = None;
        let mut more_now = false;
        for s in self.slots.iter().flatten() {
            match s.state {
                WfState::Executing { done_at } => {
                    next = Some(next.map_or(done_at, |n: VirtualTime| n.min(done_at)));
                }
                WfState::Ready => {
                    if s.has_line(s.wf.pc & !(LINE - 1)) {
                        more_now = true;
                    }
                }
                _ => {}
            }
        }
        if self.fetch.out.is_idle() && self.next_fetch_line().is_some() {
            more_now = true;
        }
        if self.vmem.out.is_idle() && !self.vmem_queue.is_empty() {
            more_now = true;
        }
        if more_now {
            next = Some(next.map_or(now.plus(1), |n| n.min(now.plus(1))));
        }
        if let Some(due) = next {
            self.wake(now, due.0 - now.0, ctx);
        }
    }

    /// Round-robin over wavefronts for the next missing wanted line;
    /// returns the granted slot and the line to fetch.
    fn next_fetch_line(&self) -> Option<(usize, u64)> {
        let n = self.slots.len();
        for k in 0..n {
            let i = (self.rr_fetch + k) % n;
            let Some(slot) = self.slots[i].as_ref() else { continue };
            if let Some(want) = slot.wanted() {
                if !slot.has_line(want) && !self.fetch_outstanding.contains_key(&want) {
                    return Some((i, want));
                }
            }
        }
        None
    }

    fn fill_fetch(&mut self, addr: u64, data: Box<[u8; LINE_BYTES]>) {
        self.fetch_outstanding.remove(&addr);
        for slot in self.slots.iter_mut().flatten() {
            if slot.wanted() == Some(addr) && !slot.has_line(addr) {
                if slot.lines.len() == 2 {
                    slot.lines.remove(0);
                }
                slot.lines.push((addr, data.clone()));
            }
        }
    }

    fn mem_reply_done(&mut self, slot_idx: usize) {
        let slot = self.slots[slot_idx].as_mut().unwrap();
        let WfState::WaitMem { pending } = &mut slot.state else {
            panic!("memory reply for a wavefront not waiting on memory")
        };
        *pending -= 1;
        if *pending == 0 {
            advance_pc(&mut slot.wf);
            slot.state = WfState::Ready;
        }
    }
}

impl Component for ComputeUnit {
    fn handle(&mut self, time: VirtualTime, kind: EventKind, ctx: &mut Ctx) {
        match kind {
            EventKind::Tick => self.tick(time, ctx),
            EventKind::Deliver { port, req } => {
                if port == self.fetch.id() {
                    self.fetch.inp.deliver(req);
                    while let Some(req) = self.fetch.inp.retrieve(ctx) {
                        match req.kind {
                            ReqKind::ReadReply { addr, data } => self.fill_fetch(addr, data),
                            other => panic!("CU fetch port received {}", other.name()),
                        }
                    }
                } else if port == self.vmem.id() {
                    self.vmem.inp.deliver(req);
                    while let Some(req) = self.vmem.inp.retrieve(ctx) {
                        match req.kind {
                            ReqKind::ReadReply { addr, data } => {
                                let q = self.load_waiting.get_mut(&addr).expect("unmatched load reply");
                                let w = q.pop_front().unwrap();
                                if q.is_empty() {
                                    self.load_waiting.remove(&addr);
                                }
                                let slot = self.slots[w.slot].as_mut().unwrap();
                                let kernel = slot.kernel.clone();
                                let inst = &kernel.instrs[slot.wf.instr_index()];
                                for l in &w.lanes {
                                    let o = l.offset as usize;
                                    flat_commit_load(
                                        &mut slot.wf,
                                        inst,
                                        l.lane,
                                        &data[o..o + l.len as usize],
                                    );
                                }
                                self.mem_reply_done(w.slot);
                            }
                            ReqKind::WriteAck { addr } => {
                                let q = self.store_waiting.get_mut(&addr).expect("unmatched store ack");
                                let s = q.pop_front().unwrap();
                                if q.is_empty() {
                                    self.store_waiting.remove(&addr);
                                }
                                self.mem_reply_done(s);
                            }
                            other => panic!("CU vmem port received {}", other.name()),
                        }
                    }
                } else if port == self.ace.id() {
                    self.ace.inp.deliver(req);
                    while let Some(req) = self.ace.inp.retrieve(ctx) {
                        match req.kind {
                            ReqKind::Ctrl(Ctrl::WgDispatch(assign)) => self.admit_wg(*assign, ctx),
                            other => panic!("CU ACE port received {}", other.name()),
                        }
                    }
                } else {
                    panic!("deliver to unknown CU port");
                }
                self.wake(time, 1, ctx);
            }
            EventKind::CreditReturn { port } => {
                if port == self.fetch.id() {
                    self.fetch.out.credit_returned(ctx);
                } else if port == self.vmem.id() {
                    self.vmem.out.credit_returned(ctx);
                } else if port == self.ace.id() {
                    self.ace.out.credit_returned(ctx);
                } else {
                    panic!("credit for unknown CU port");
                }
                self.wake(time, 1, ctx);
            }
            other => panic!("CU received unexpected event {}", other.name()),
        }
    }
}
