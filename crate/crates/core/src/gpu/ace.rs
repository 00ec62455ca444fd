//! Asynchronous compute engine: turns a kernel launch into a stream of
//! work-group dispatches. Work-groups go out in ascending id order onto
//! compute units chosen round-robin, and never over-subscribe a CU's
//! wavefront-slot or LDS budget.

use std::collections::HashMap;
use std::sync::Arc;

use crate::engine::{Component, Ctx, EventKind, VirtualTime};
use crate::fabric::{Endpoint, IdGen, ReqKind, Request};
use crate::proto::{Ctrl, Launch, LaunchId, WgAssign};

#[derive(Debug, Clone, Copy)]
pub struct CuBudget {
    pub wavefront_slots: u32,
    pub lds_bytes: u32,
}

struct CuState {
    free_slots: u32,
    free_lds: u32,
}

struct ActiveLaunch {
    launch: Arc<Launch>,
    next_wg: u64,
    outstanding: u64,
}

pub struct AceDispatcher {
    cp: Endpoint,
    cus: Vec<Endpoint>,
    cu_state: Vec<CuState>,
    budget: CuBudget,
    ids: IdGen,
    /// FIFO of launches still holding undispatched work-groups, by id.
    queue: Vec<LaunchId>,
    active: HashMap<LaunchId, ActiveLaunch>,
    rr: usize,
}

impl AceDispatcher {
    pub fn new(cp: Endpoint, cus: Vec<Endpoint>, budget: CuBudget, ids: IdGen) -> AceDispatcher {
        let cu_state = cus
            .iter()
            .map(|_| CuState { free_slots: budget.wavefront_slots, free_lds: budget.lds_bytes })
            .collect();
        AceDispatcher { cp, cus, cu_state, budget, ids, queue: Vec::new(), active: HashMap::new(), rr: 0 }
    }

    fn wg_cost(launch: &Launch) -> (u32, u32) {
        (launch.spec.wavefronts_per_group(), launch.spec.kernel.lds_bytes)
    }

    fn try_dispatch(&mut self, ctx: &mut Ctx) {
        while let Some(&launch_id) = self.queue.first() {
            let entry = self.active.get_mut(&launch_id).unwrap();
            let launch = entry.launch.clone();
            let (slots, lds) = Self::wg_cost(&launch);
            assert!(
                slots <= self.budget.wavefront_slots && lds <= self.budget.lds_bytes,
                "work-group needs {slots} wavefront slots / {lds} LDS bytes, exceeding a CU's budget"
            );
            if entry.next_wg >= launch.wg_first + launch.wg_count {
                self.queue.remove(0);
                continue;
            }
            // Round-robin scan for a CU with room.
            let n = self.cus.len();
            let found = (0..n)
                .map(|k| (self.rr + k) % n)
                .find(|&cu| self.cu_state[cu].free_slots >= slots && self.cu_state[cu].free_lds >= lds);
            let Some(cu) = found else {
                return; // wait for a WgDone to free resources
            };
            let wg = entry.next_wg;
            entry.next_wg += 1;
            self.cu_state[cu].free_slots -= slots;
            self.cu_state[cu].free_lds -= lds;
            self.rr = (cu + 1) % n;
            ctx.count("workgroups_dispatched", 1);
            let assign = WgAssign { launch: launch_id, spec: launch, wg: wg as u32 };
            let req = Request::new(
                self.ids.next(),
                ReqKind::Ctrl(Ctrl::WgDispatch(Box::new(assign))),
            );
            self.cus[cu].out.send(ctx, req);
        }
    }
}

impl Component for AceDispatcher {
    fn handle(&mut self, _time: VirtualTime, kind: EventKind, ctx: &mut Ctx) {
        match kind {
            EventKind::Deliver { port, req } => {
                if port == self.cp.id() {
                    self.cp.inp.deliver(req);
                    while let Some(req) = self.cp.inp.retrieve(ctx) {
                        match req.kind {
                            ReqKind::Ctrl(Ctrl::AceLaunch(launch)) => {
                                let id = launch.id;
                                self.queue.push(id);
                                let prev = self.active.insert(
                                    id,
                                    ActiveLaunch {
                                        next_wg: launch.wg_first,
                                        outstanding: launch.wg_count,
                                        launch,
                                    },
                                );
                                assert!(prev.is_none(), "duplicate launch at ACE");
                            }
                            other => panic!("ACE received {}", other.name()),
                        }
                    }
                    self.try_dispatch(ctx);
                } else {
                    let cu = self
                        .cus
                        .iter()
                        .position(|c| c.id() == port)
                        .expect("deliver to unknown ACE port");
                    self.cus[cu].inp.deliver(req);
                    while let Some(req) = self.cus[cu].inp.retrieve(ctx) {
                        match req.kind {
                            ReqKind::Ctrl(Ctrl::WgDone { launch, .. }) => {
                                let entry = self.active.get_mut(&launch).expect("WgDone for unknown launch");
                                let (slots, lds) = Self::wg_cost(&entry.launch);
                                self.cu_state[cu].free_slots += slots;
                                self.cu_state[cu].free_lds += lds;
                                entry.outstanding -= 1;
                                if entry.outstanding == 0 {
                                    debug_assert!(!self.queue.contains(&launch));
                                    self.active.remove(&launch);
                                    let req = Request::new(
                                        self.ids.next(),
                                        ReqKind::Ctrl(Ctrl::AceDone { launch }),
                                    );
                                    self.cp.out.send(ctx, req);
                                }
                            }
                            other => panic!("ACE received {}", other.name()),
                        }
                    }
                    self.try_dispatch(ctx);
                }
            }
            EventKind::CreditReturn { port } => {
                if port == self.cp.id() {
                    self.cp.out.credit_returned(ctx);
                } else if let Some(c) = self.cus.iter_mut().find(|c| c.id() == port) {
                    c.out.credit_returned(ctx);
                } else {
                    panic!("credit for unknown ACE port");
                }
            }
            other => panic!("ACE received unexpected event {}", other.name()),
        }
    }
}
