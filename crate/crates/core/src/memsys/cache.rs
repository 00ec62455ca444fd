//! Set-associative cache controller (write-around L1s, write-back L2s).
//!
//! Classification and replacement happen at request-arrival time: a miss
//! immediately claims its victim way (writing back a dirty victim) and
//! marks the way *filling* while the line fetch is in flight, so the
//! hit/miss stream and LRU evolution are exactly those of a sequential
//! immediate-fill LRU model replaying the same arrival order. Misses to a
//! line already being fetched coalesce onto the transaction's waiter list
//! and classify as hits. A filling way can itself be chosen as a victim;
//! its transaction is then *orphaned*: the fill still answers the waiters
//! but does not install the line.
//!
//! Reply correlation is by address: a client with several requests
//! outstanding to one line receives that many replies for it, in order.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use crate::engine::{Component, Ctx, EventKind, VirtualTime};
use crate::fabric::{Endpoint, IdGen, PortId, ReqKind, Request, LINE_BYTES};

const LINE: u64 = LINE_BYTES as u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WritePolicy {
    /// Write misses never allocate; writes always forward downstream and
    /// the downstream ack is routed back to the writer.
    WriteAround,
    /// Write-allocate; dirty lines written back on eviction or flush.
    WriteBack,
}

#[derive(Debug, Clone, Copy)]
pub struct CacheGeometry {
    pub size_bytes: u64,
    pub assoc: u32,
}

impl CacheGeometry {
    pub fn sets(&self) -> u64 {
        let lines = self.size_bytes / LINE;
        assert!(lines % u64::from(self.assoc) == 0, "geometry does not tile into sets");
        let sets = lines / u64::from(self.assoc);
        assert!(sets >= 1);
        sets
    }
}

/// Address interleaving seen by a banked cache: the bank owns every
/// `span`-byte chunk whose index is congruent to its own, out of `step`
/// banks. Set indexing must use the bank-local (de-interleaved) address,
/// otherwise the constant bank-select bits alias all traffic into a
/// `1/step` fraction of the sets.
#[derive(Debug, Clone, Copy)]
pub struct Interleave {
    pub span: u64,
    pub step: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct CacheParams {
    pub geometry: CacheGeometry,
    pub policy: WritePolicy,
    /// Cycles from a hit's arrival to its reply leaving the cache (also
    /// applied to fill-time waiter replies).
    pub hit_latency: u64,
    /// Transaction-table capacity; `None` = unbounded.
    pub mshr_capacity: Option<usize>,
    /// `Some` for a bank of an interleaved cache complex.
    pub interleave: Option<Interleave>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LineState {
    Invalid,
    Filling,
    Valid,
}

struct Line {
    tag: u64,
    state: LineState,
    dirty: bool,
    last_used: u64,
    data: Box<[u8; LINE_BYTES]>,
}

enum Waiter {
    Read { top: usize },
    /// Write merged at fill time; acked from here (write-back policy).
    Write { top: usize, data: Box<[u8; LINE_BYTES]>, mask: u64 },
    /// Write merged at fill time; the ack arrives separately from below
    /// (write-around forward path).
    WriteNoAck { data: Box<[u8; LINE_BYTES]>, mask: u64 },
}

struct Txn {
    /// Claimed (set, way), or `None` once orphaned by eviction.
    way: Option<(usize, usize)>,
    waiters: Vec<Waiter>,
}

/// Observed access classifications, exposed for oracle cross-checks.
pub type Probe = Arc<Mutex<Vec<(u64, bool, bool)>>>; // (line addr, is_write, hit)

pub struct CacheUnit {
    params: CacheParams,
    sets: Vec<Vec<Line>>,
    tops: Vec<Endpoint>,
    bottom: Endpoint,
    ids: IdGen,
    use_counter: u64,
    txns: HashMap<u64, Txn>,
    /// Per-line FIFO of tops awaiting a forwarded write's ack.
    forwards: HashMap<u64, VecDeque<usize>>,
    /// Outstanding write-back acks (evictions, orphan merges, flush).
    wb_acks: u64,
    /// Due-time-ordered replies heading up.
    replies: VecDeque<(VirtualTime, usize, ReqKind)>,
    flush_reply_top: Option<usize>,
    probe: Option<Probe>,
}

impl CacheUnit {
    pub fn new(params: CacheParams, tops: Vec<Endpoint>, bottom: Endpoint, ids: IdGen) -> CacheUnit {
        assert!(params.hit_latency >= 1);
        let nsets = params.geometry.sets() as usize;
        let sets = (0..nsets)
            .map(|_| {
                (0..params.geometry.assoc)
                    .map(|_| Line {
                        tag: 0,
                        state: LineState::Invalid,
                        dirty: false,
                        last_used: 0,
                        data: Box::new([0u8; LINE_BYTES]),
                    })
                    .collect()
            })
            .collect();
        CacheUnit {
            params,
            sets,
            tops,
            bottom,
            ids,
            use_counter: 0,
            txns: HashMap::new(),
            forwards: HashMap::new(),
            wb_acks: 0,
            replies: VecDeque::new(),
            flush_reply_top: None,
            probe: None,
        }
    }

    /// Record every access classification into `probe` (test support).
    pub fn set_probe(&mut self, probe: Probe) {
        self.probe = Some(probe);
    }

    /// The tag is the full line frame (so the line address survives the
    /// set indexing untouched); the set index comes from the bank-local
    /// view of the address when this bank is part of an interleaved
    /// complex.
    fn set_and_tag(&self, line_addr: u64) -> (usize, u64) {
        let nsets = self.sets.len() as u64;
        let frame = line_addr / LINE;
        let index_frame = match self.params.interleave {
            Some(iv) => (line_addr / (iv.span * iv.step)) * (iv.span / LINE)
                + (line_addr % iv.span) / LINE,
            None => frame,
        };
        ((index_frame % nsets) as usize, frame)
    }

    fn line_addr_of(&self, tag: u64) -> u64 {
        tag * LINE
    }

    fn touch(&mut self, set: usize, way: usize) {
        self.use_counter += 1;
        self.sets[set][way].last_used = self.use_counter;
    }

    fn lookup(&self, set: usize, tag: u64) -> Option<usize> {
        self.sets[set]
            .iter()
            .position(|l| l.state != LineState::Invalid && l.tag == tag)
    }

    fn classify(&mut self, line_addr: u64, is_write: bool, hit: bool, ctx: &mut Ctx) {
        ctx.count(if hit { "hits" } else { "misses" }, 1);
        if let Some(p) = &self.probe {
            p.lock().unwrap().push((line_addr, is_write, hit));
        }
    }

    fn push_reply(&mut self, now: VirtualTime, top: usize, kind: ReqKind, ctx: &mut Ctx) {
        let due = now.plus(self.params.hit_latency);
        debug_assert!(self.replies.back().is_none_or(|(t, _, _)| *t <= due));
        self.replies.push_back((due, top, kind));
        ctx.schedule_self(self.params.hit_latency, EventKind::Timer(0));
    }

    fn send_below(&mut self, kind: ReqKind, ctx: &mut Ctx) {
        let req = Request::new(self.ids.next(), kind);
        self.bottom.out.send(ctx, req);
    }

    /// Claim a way for `line_addr`, evicting (and if dirty, writing back)
    /// the LRU victim. Invalid ways are used first; a filling victim's
    /// transaction is orphaned.
    fn allocate(&mut self, line_addr: u64, ctx: &mut Ctx) -> (usize, usize) {
        let (set, tag) = self.set_and_tag(line_addr);
        let way = match self.sets[set].iter().position(|l| l.state == LineState::Invalid) {
            Some(w) => w,
            None => {
                let w = self.sets[set]
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, l)| l.last_used)
                    .map(|(i, _)| i)
                    .unwrap();
                let victim_addr = self.line_addr_of(self.sets[set][w].tag);
                match self.sets[set][w].state {
                    LineState::Valid => {
                        if self.sets[set][w].dirty {
                            let data = self.sets[set][w].data.clone();
                            ctx.count("writebacks", 1);
                            self.wb_acks += 1;
                            self.send_below(
                                ReqKind::Write { addr: victim_addr, data, mask: u64::MAX },
                                ctx,
                            );
                        }
                    }
                    LineState::Filling => {
                        let txn = self.txns.get_mut(&victim_addr).expect("filling way without txn");
                        txn.way = None;
                        ctx.count("orphaned_fills", 1);
                    }
                    LineState::Invalid => unreachable!(),
                }
                w
            }
        };
        let line = &mut self.sets[set][way];
        line.tag = tag;
        line.state = LineState::Filling;
        line.dirty = false;
        line.data = Box::new([0u8; LINE_BYTES]);
        self.touch(set, way);
        (set, way)
    }

    fn start_fetch(&mut self, line_addr: u64, waiter: Waiter, ctx: &mut Ctx) {
        let slot = self.allocate(line_addr, ctx);
        match self.txns.get_mut(&line_addr) {
            // An orphaned fetch for this line is still in flight; adopt
            // the new way instead of issuing a second fetch.
            Some(txn) => {
                debug_assert!(txn.way.is_none());
                txn.way = Some(slot);
                txn.waiters.push(waiter);
            }
            None => {
                self.txns
                    .insert(line_addr, Txn { way: Some(slot), waiters: vec![waiter] });
                self.send_below(ReqKind::Read { addr: line_addr }, ctx);
            }
        }
    }

    fn accepting(&self) -> bool {
        match self.params.mshr_capacity {
            Some(cap) => self.txns.len() < cap,
            None => true,
        }
    }

    fn handle_read(&mut self, now: VirtualTime, top: usize, addr: u64, ctx: &mut Ctx) {
        assert!(addr % LINE == 0, "cache read must be line aligned: {addr:#x}");
        let (set, tag) = self.set_and_tag(addr);
        match self.lookup(set, tag) {
            Some(way) if self.sets[set][way].state == LineState::Valid => {
                self.classify(addr, false, true, ctx);
                self.touch(set, way);
                let data = self.sets[set][way].data.clone();
                self.push_reply(now, top, ReqKind::ReadReply { addr, data }, ctx);
            }
            Some(way) => {
                // Filling: the fetch already in flight covers this read.
                self.classify(addr, false, true, ctx);
                self.touch(set, way);
                self.txns
                    .get_mut(&addr)
                    .expect("filling way without txn")
                    .waiters
                    .push(Waiter::Read { top });
            }
            None => {
                self.classify(addr, false, false, ctx);
                self.start_fetch(addr, Waiter::Read { top }, ctx);
            }
        }
    }

    fn handle_write(
        &mut self,
        now: VirtualTime,
        top: usize,
        addr: u64,
        data: Box<[u8; LINE_BYTES]>,
        mask: u64,
        ctx: &mut Ctx,
    ) {
        assert!(addr % LINE == 0, "cache write must be line aligned: {addr:#x}");
        let (set, tag) = self.set_and_tag(addr);
        let around = self.params.policy == WritePolicy::WriteAround;
        match self.lookup(set, tag) {
            Some(way) if self.sets[set][way].state == LineState::Valid => {
                self.classify(addr, true, true, ctx);
                self.touch(set, way);
                merge(&mut self.sets[set][way].data, &data, mask);
                if around {
                    self.forwards.entry(addr).or_default().push_back(top);
                    self.send_below(ReqKind::Write { addr, data, mask }, ctx);
                } else {
                    self.sets[set][way].dirty = true;
                    self.push_reply(now, top, ReqKind::WriteAck { addr }, ctx);
                }
            }
            Some(way) => {
                self.classify(addr, true, true, ctx);
                self.touch(set, way);
                let txn = self.txns.get_mut(&addr).expect("filling way without txn");
                if around {
                    txn.waiters.push(Waiter::WriteNoAck { data: data.clone(), mask });
                    self.forwards.entry(addr).or_default().push_back(top);
                    self.send_below(ReqKind::Write { addr, data, mask }, ctx);
                } else {
                    txn.waiters.push(Waiter::Write { top, data, mask });
                }
            }
            None => {
                self.classify(addr, true, false, ctx);
                if around {
                    self.forwards.entry(addr).or_default().push_back(top);
                    self.send_below(ReqKind::Write { addr, data, mask }, ctx);
                } else {
                    self.start_fetch(addr, Waiter::Write { top, data, mask }, ctx);
                }
            }
        }
    }

    fn handle_fill(&mut self, now: VirtualTime, addr: u64, fetched: Box<[u8; LINE_BYTES]>, ctx: &mut Ctx) {
        let txn = self.txns.remove(&addr).expect("fill without transaction");
        ctx.count("fills", 1);
        let mut scratch = fetched;
        let mut written_mask = 0u64;
        let mut acked = Vec::new();
        for w in txn.waiters {
            match w {
                Waiter::Read { top } => {
                    self.push_reply(now, top, ReqKind::ReadReply { addr, data: scratch.clone() }, ctx)
                }
                Waiter::Write { top, data, mask } => {
                    merge(&mut scratch, &data, mask);
                    written_mask |= mask;
                    acked.push(top);
                }
                Waiter::WriteNoAck { data, mask } => {
                    merge(&mut scratch, &data, mask);
                    // Forwarded below already; data folded in for local
                    // freshness only.
                }
            }
        }
        for top in acked {
            self.push_reply(now, top, ReqKind::WriteAck { addr }, ctx);
        }
        match txn.way {
            Some((set, way)) => {
                let (_, tag) = self.set_and_tag(addr);
                let line = &mut self.sets[set][way];
                debug_assert!(line.state == LineState::Filling && line.tag == tag);
                line.data = scratch;
                line.state = LineState::Valid;
                line.dirty = written_mask != 0;
            }
            None => {
                // Orphaned: waiters answered from the fetched data; any
                // write-allocate merges must not be lost, so push them
                // downstream as one combined write.
                if written_mask != 0 {
                    self.wb_acks += 1;
                    self.send_below(ReqKind::Write { addr, data: scratch, mask: written_mask }, ctx);
                }
            }
        }
        self.pump_tops(now, ctx);
    }

    fn handle_write_ack(&mut self, now: VirtualTime, addr: u64, ctx: &mut Ctx) {
        if let Some(q) = self.forwards.get_mut(&addr) {
            let top = q.pop_front().expect("forward queue empty");
            if q.is_empty() {
                self.forwards.remove(&addr);
            }
            self.push_reply(now, top, ReqKind::WriteAck { addr }, ctx);
            return;
        }
        assert!(self.wb_acks > 0, "unexpected write ack from below");
        self.wb_acks -= 1;
        if self.wb_acks == 0 {
            if let Some(top) = self.flush_reply_top.take() {
                self.push_reply(now, top, ReqKind::FlushAck, ctx);
            }
        }
    }

    fn handle_flush(&mut self, now: VirtualTime, top: usize, ctx: &mut Ctx) {
        assert!(
            self.txns.is_empty() && self.forwards.is_empty(),
            "flush while transactions are in flight"
        );
        let mut writebacks = Vec::new();
        for ways in self.sets.iter_mut() {
            for line in ways.iter_mut() {
                if line.state == LineState::Valid && line.dirty {
                    writebacks.push((line.tag * LINE, line.data.clone()));
                }
                line.state = LineState::Invalid;
                line.dirty = false;
            }
        }
        ctx.count("flush_writebacks", writebacks.len() as u64);
        for (addr, data) in writebacks {
            self.wb_acks += 1;
            self.send_below(ReqKind::Write { addr, data, mask: u64::MAX }, ctx);
        }
        if self.wb_acks == 0 {
            self.push_reply(now, top, ReqKind::FlushAck, ctx);
        } else {
            assert!(self.flush_reply_top.is_none(), "overlapping flushes");
            self.flush_reply_top = Some(top);
        }
    }

    fn top_index(&self, port: PortId) -> Option<usize> {
        self.tops.iter().position(|e| e.id() == port)
    }

    /// Drain delivered top-side requests in port order while the
    /// transaction table accepts new work.
    fn pump_tops(&mut self, now: VirtualTime, ctx: &mut Ctx) {
        loop {
            let mut progressed = false;
            for i in 0..self.tops.len() {
                while self.accepting() && !self.tops[i].inp.is_empty() {
                    let req = self.tops[i].inp.retrieve(ctx).unwrap();
                    progressed = true;
                    match req.kind {
                        ReqKind::Read { addr } => self.handle_read(now, i, addr, ctx),
                        ReqKind::Write { addr, data, mask } => {
                            self.handle_write(now, i, addr, data, mask, ctx)
                        }
                        ReqKind::Flush => self.handle_flush(now, i, ctx),
                        other => panic!("cache top port received {}", other.name()),
                    }
                }
            }
            if !progressed {
                break;
            }
        }
    }
}

fn merge(dst: &mut [u8; LINE_BYTES], src: &[u8; LINE_BYTES], mask: u64) {
    for i in 0..LINE_BYTES {
        if mask & (1u64 << i) != 0 {
            dst[i] = src[i];
        }
    }
}

impl Component for CacheUnit {
    fn handle(&mut self, time: VirtualTime, kind: EventKind, ctx: &mut Ctx) {
        match kind {
            EventKind::Deliver { port, req } => {
                if port == self.bottom.id() {
                    self.bottom.inp.deliver(req);
                    while let Some(req) = self.bottom.inp.retrieve(ctx) {
                        match req.kind {
                            ReqKind::ReadReply { addr, data } => {
                                self.handle_fill(time, addr, data, ctx)
                            }
                            ReqKind::WriteAck { addr } => self.handle_write_ack(time, addr, ctx),
                            other => panic!("cache bottom port received {}", other.name()),
                        }
                    }
                } else {
                    let i = self.top_index(port).expect("deliver to unknown cache port");
                    self.tops[i].inp.deliver(req);
                    self.pump_tops(time, ctx);
                }
            }
            EventKind::Timer(_) => {
                while let Some((due, _, _)) = self.replies.front() {
                    if *due != time {
                        break;
                    }
                    let (_, top, kind) = self.replies.pop_front().unwrap();
                    let req = Request::new(self.ids.next(), kind);
                    self.tops[top].out.send(ctx, req);
                }
            }
            EventKind::CreditReturn { port } => {
                if port == self.bottom.id() {
                    self.bottom.out.credit_returned(ctx);
                } else {
                    let i = self.top_index(port).expect("credit for unknown cache port");
                    self.tops[i].out.credit_returned(ctx);
                }
            }
            other => panic!("cache received unexpected event {}", other.name()),
        }
    }
}
