//! Per-GPU memory-side interconnect.
//!
//! The router sits between the private caches (CU vector ports, L1I /
//! L1V bottoms) and the banked L2. Every request is steered by physical
//! address: locally-owned lines go to the home L2 bank, remote lines go
//! to the RDMA engine. Replies retrace the path using per-address FIFOs,
//! which is sound because the downstream memory system answers
//! same-address requests of one kind in arrival order.
//!
//! The RDMA engine bridges the router to the PCIe bus. It keeps an
//! outstanding-request table for remote requests it is servicing on
//! behalf of other GPUs; the table must drain to empty at quiescence.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use crate::engine::{Component, Ctx, EventKind, VirtualTime};
use crate::fabric::{Endpoint, PortId, ReqKind, Request};
use crate::memsys::mapper::AddressMapper;

/// Steers line requests between a GPU's caches, its local L2 banks, and
/// (on multi-GPU parts) the RDMA engine.
pub struct Router {
    gpu: u32,
    mapper: Arc<AddressMapper>,
    tops: Vec<Endpoint>,
    l2s: Vec<Endpoint>,
    rdma: Option<Endpoint>,
    /// Reply routing: requester top index per address, FIFO per kind.
    read_waiting: HashMap<u64, VecDeque<usize>>,
    write_waiting: HashMap<u64, VecDeque<usize>>,
}

impl Router {
    pub fn new(
        gpu: u32,
        mapper: Arc<AddressMapper>,
        tops: Vec<Endpoint>,
        l2s: Vec<Endpoint>,
        rdma: Option<Endpoint>,
    ) -> Router {
        Router {
            gpu,
            mapper,
            tops,
            l2s,
            rdma,
            read_waiting: HashMap::new(),
            write_waiting: HashMap::new(),
        }
    }

    fn route_down(&mut self, top: usize, mut req: Request, ctx: &mut Ctx) {
        let addr = match req.kind {
            ReqKind::Read { addr } => {
                self.read_waiting.entry(addr).or_default().push_back(top);
                addr
            }
            ReqKind::Write { addr, .. } => {
                self.write_waiting.entry(addr).or_default().push_back(top);
                addr
            }
            ref other => panic!("router received {} from above", other.name()),
        };
        let mapped = self.mapper.map(addr);
        req.dst = PortId::INVALID; // direct connections resolve the peer
        if mapped.gpu == self.gpu {
            self.l2s[mapped.bank as usize].out.send(ctx, req);
        } else {
            match req.kind {
                ReqKind::Read { .. } => ctx.count("remote_reads", 1),
                _ => ctx.count("remote_writes", 1),
            }
            self.rdma
                .as_mut()
                .expect("remote address on a GPU without RDMA")
                .out
                .send(ctx, req);
        }
    }

    fn route_up(&mut self, mut req: Request, ctx: &mut Ctx) {
        let top = match req.kind {
            ReqKind::ReadReply { addr, .. } => self
                .read_waiting
                .get_mut(&addr)
                .and_then(VecDeque::pop_front)
                .expect("read reply with no waiting requester"),
            ReqKind::WriteAck { addr } => self
                .write_waiting
                .get_mut(&addr)
                .and_then(VecDeque::pop_front)
                .expect("write ack with no waiting requester"),
            ref other => panic!("router received {} from below", other.name()),
        };
        req.dst = PortId::INVALID;
        self.tops[top].out.send(ctx, req);
    }

    /// True when no reply is owed to any requester.
    pub fn quiescent(&self) -> bool {
        self.read_waiting.values().all(VecDeque::is_empty)
            && self.write_waiting.values().all(VecDeque::is_empty)
    }
}

impl Component for Router {
    fn handle(&mut self, _time: VirtualTime, kind: EventKind, ctx: &mut Ctx) {
        match kind {
            EventKind::Deliver { port, req } => {
                if let Some(top) = self.tops.iter().position(|t| t.id() == port) {
                    self.tops[top].inp.deliver(req);
                    while let Some(req) = self.tops[top].inp.retrieve(ctx) {
                        self.route_down(top, req, ctx);
                    }
                } else if let Some(i) = self.l2s.iter().position(|b| b.id() == port) {
                    self.l2s[i].inp.deliver(req);
                    while let Some(req) = self.l2s[i].inp.retrieve(ctx) {
                        self.route_up(req, ctx);
                    }
                } else if self.rdma.as_ref().is_some_and(|r| r.id() == port) {
                    let r = self.rdma.as_mut().unwrap();
                    r.inp.deliver(req);
                    while let Some(req) = self.rdma.as_mut().unwrap().inp.retrieve(ctx) {
                        self.route_up(req, ctx);
                    }
                } else {
                    panic!("deliver to unknown router port");
                }
            }
            EventKind::CreditReturn { port } => {
                let ep = self
                    .tops
                    .iter_mut()
                    .chain(self.l2s.iter_mut())
                    .chain(self.rdma.iter_mut())
                    .find(|e| e.id() == port)
                    .expect("credit for unknown router port");
                ep.out.credit_returned(ctx);
            }
            other => panic!("router received unexpected event {}", other.name()),
        }
    }
}

/// Bridges a GPU's router to the PCIe bus.
///
/// Three endpoints:
/// * `from_router` — receives the router's outgoing remote requests and
///   carries their replies back;
/// * `to_router` — injects remote GPUs' requests into the local router
///   (as an ordinary top client) and receives their replies;
/// * `bus` — the PCIe attachment point.
pub struct RdmaEngine {
    gpu: u32,
    mapper: Arc<AddressMapper>,
    from_router: Endpoint,
    to_router: Endpoint,
    bus: Endpoint,
    /// Bus port of every GPU's RDMA engine, indexed by GPU.
    peers: Vec<PortId>,
    /// Outstanding-request table for remote requests being serviced
    /// locally: requesting bus port per address, FIFO per kind.
    in_reads: HashMap<u64, VecDeque<PortId>>,
    in_writes: HashMap<u64, VecDeque<PortId>>,
}

impl RdmaEngine {
    pub fn new(
        gpu: u32,
        mapper: Arc<AddressMapper>,
        from_router: Endpoint,
        to_router: Endpoint,
        bus: Endpoint,
        peers: Vec<PortId>,
    ) -> RdmaEngine {
        RdmaEngine {
            gpu,
            mapper,
            from_router,
            to_router,
            bus,
            peers,
            in_reads: HashMap::new(),
            in_writes: HashMap::new(),
        }
    }

    /// Outgoing: a locally-issued request for a remote line.
    fn on_outgoing(&mut self, mut req: Request, ctx: &mut Ctx) {
        let addr = match req.kind {
            ReqKind::Read { addr } | ReqKind::Write { addr, .. } => addr,
            ref other => panic!("RDMA asked to ship {}", other.name()),
        };
        let owner = self.mapper.map(addr).gpu;
        assert_ne!(owner, self.gpu, "local address routed to RDMA");
        req.dst = self.peers[owner as usize];
        ctx.count("rdma_tx_bytes", req.byte_size());
        self.bus.out.send(ctx, req);
    }

    /// From the bus: either a remote GPU's request for one of our lines,
    /// or the reply to a request we shipped out.
    fn on_bus(&mut self, mut req: Request, ctx: &mut Ctx) {
        match req.kind {
            ReqKind::Read { addr } => {
                self.in_reads.entry(addr).or_default().push_back(req.src);
                req.dst = PortId::INVALID;
                self.to_router.out.send(ctx, req);
            }
            ReqKind::Write { addr, .. } => {
                self.in_writes.entry(addr).or_default().push_back(req.src);
                req.dst = PortId::INVALID;
                self.to_router.out.send(ctx, req);
            }
            ReqKind::ReadReply { .. } | ReqKind::WriteAck { .. } => {
                req.dst = PortId::INVALID;
                self.from_router.out.send(ctx, req);
            }
            ref other => panic!("RDMA received {} from the bus", other.name()),
        }
    }

    /// Reply from the local router for a remote GPU's request.
    fn on_served(&mut self, mut req: Request, ctx: &mut Ctx) {
        let back = match req.kind {
            ReqKind::ReadReply { addr, .. } => self
                .in_reads
                .get_mut(&addr)
                .and_then(VecDeque::pop_front)
                .expect("served read with no remote requester"),
            ReqKind::WriteAck { addr } => self
                .in_writes
                .get_mut(&addr)
                .and_then(VecDeque::pop_front)
                .expect("served write with no remote requester"),
            ref other => panic!("RDMA received {} from the router", other.name()),
        };
        req.dst = back;
        ctx.count("rdma_tx_bytes", req.byte_size());
        self.bus.out.send(ctx, req);
    }

    pub fn quiescent(&self) -> bool {
        self.in_reads.values().all(VecDeque::is_empty)
            && self.in_writes.values().all(VecDeque::is_empty)
    }
}

impl Component for RdmaEngine {
    fn handle(&mut self, _time: VirtualTime, kind: EventKind, ctx: &mut Ctx) {
        match kind {
            EventKind::Deliver { port, req } => {
                if port == self.from_router.id() {
                    self.from_router.inp.deliver(req);
                    while let Some(req) = self.from_router.inp.retrieve(ctx) {
                        self.on_outgoing(req, ctx);
                    }
                } else if port == self.bus.id() {
                    self.bus.inp.deliver(req);
                    while let Some(req) = self.bus.inp.retrieve(ctx) {
                        self.on_bus(req, ctx);
                    }
                } else if port == self.to_router.id() {
                    self.to_router.inp.deliver(req);
                    while let Some(req) = self.to_router.inp.retrieve(ctx) {
                        self.on_served(req, ctx);
                    }
                } else {
                    panic!("deliver to unknown RDMA port");
                }
            }
            EventKind::CreditReturn { port } => {
                let ep = [&mut self.from_router, &mut self.to_router, &mut self.bus]
                    .into_iter()
                    .find(|e| e.id() == port)
                    .expect("credit for unknown RDMA port");
                ep.out.credit_returned(ctx);
            }
            other => panic!("RDMA received unexpected event {}", other.name()),
        }
    }
}
