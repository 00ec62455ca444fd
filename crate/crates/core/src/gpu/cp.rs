//! Command processor: the GPU front end. Receives kernel launches from
//! the driver, hands them to the ACE, and reports completion once every
//! work-group retired. Also coordinates cache flushes on the driver's
//! behalf, since the CP is the only block wired to every cache of its
//! GPU.

use std::collections::HashMap;

use crate::engine::{Component, Ctx, EventKind, VirtualTime};
use crate::fabric::{Endpoint, IdGen, PortId, ReqKind, Request};
use crate::proto::{Ctrl, LaunchId};

pub struct CommandProcessor {
    driver: Endpoint,
    /// Empty on the disabled CPs of U-MGPU GPUs 1-3 (they still flush).
    ace: Option<Endpoint>,
    caches: Vec<Endpoint>,
    ids: IdGen,
    active: HashMap<LaunchId, ()>,
    flush_pending: Option<(LaunchId, usize)>,
}

impl CommandProcessor {
    pub fn new(driver: Endpoint, ace: Option<Endpoint>, caches: Vec<Endpoint>, ids: IdGen) -> Self {
        CommandProcessor { driver, ace, caches, ids, active: HashMap::new(), flush_pending: None }
    }

    fn handle_ctrl(&mut self, ctrl: Ctrl, from: PortId, ctx: &mut Ctx) {
        match ctrl {
            Ctrl::KernelLaunch(launch) => {
                assert_eq!(from, self.driver.id());
                let ace = self.ace.as_mut().expect("kernel launch on a disabled command processor");
                assert!(
                    self.active.insert(launch.id, ()).is_none(),
                    "launch id reused while active"
                );
                ctx.count("kernels_started", 1);
                let req = Request::new(self.ids.next(), ReqKind::Ctrl(Ctrl::AceLaunch(launch)));
                ace.out.send(ctx, req);
            }
            Ctrl::AceDone { launch } => {
                self.active.remove(&launch).expect("completion for unknown launch");
                ctx.count("kernels_done", 1);
                let req = Request::new(self.ids.next(), ReqKind::Ctrl(Ctrl::KernelDone { launch }));
                self.driver.out.send(ctx, req);
            }
            Ctrl::CacheFlush { launch } => {
                assert_eq!(from, self.driver.id());
                assert!(self.flush_pending.is_none(), "overlapping flush commands");
                assert!(self.active.is_empty(), "flush while kernels are running");
                self.flush_pending = Some((launch, self.caches.len()));
                for i in 0..self.caches.len() {
                    let req = Request::new(self.ids.next(), ReqKind::Flush);
                    self.caches[i].out.send(ctx, req);
                }
                if self.caches.is_empty() {
                    self.finish_flush(ctx);
                }
            }
            other => panic!("command processor received {}", other.name()),
        }
    }

    fn finish_flush(&mut self, ctx: &mut Ctx) {
        let (launch, _) = self.flush_pending.take().unwrap();
        let req = Request::new(self.ids.next(), ReqKind::Ctrl(Ctrl::CacheFlushed { launch }));
        self.driver.out.send(ctx, req);
    }
}

impl Component for CommandProcessor {
    fn handle(&mut self, _time: VirtualTime, kind: EventKind, ctx: &mut Ctx) {
        match kind {
            EventKind::Deliver { port, req } => {
                let endpoint = if port == self.driver.id() {
                    &mut self.driver
                } else if self.ace.as_ref().is_some_and(|a| a.id() == port) {
                    self.ace.as_mut().unwrap()
                } else {
                    self.caches
                        .iter_mut()
                        .find(|c| c.id() == port)
                        .expect("deliver to unknown CP port")
                };
                endpoint.inp.deliver(req);
                while let Some(req) = {
                    // Re-borrow each iteration; the handler may need other
                    // endpoints.
                    let ep: &mut Endpoint = if port == self.driver.id() {
                        &mut self.driver
                    } else if self.ace.as_ref().is_some_and(|a| a.id() == port) {
                        self.ace.as_mut().unwrap()
                    } else {
                        self.caches.iter_mut().find(|c| c.id() == port).unwrap()
                    };
                    ep.inp.retrieve(ctx)
                } {
                    match req.kind {
                        ReqKind::Ctrl(c) => self.handle_ctrl(c, port, ctx),
                        ReqKind::FlushAck => {
                            let pending = self
                                .flush_pending
                                .as_mut()
                                .expect("flush ack without flush in progress");
                            pending.1 -= 1;
                            if pending.1 == 0 {
                                self.finish_flush(ctx);
                            }
                        }
                        other => panic!("command processor received {}", other.name()),
                    }
                }
            }
            EventKind::CreditReturn { port } => {
                if port == self.driver.id() {
                    self.driver.out.credit_returned(ctx);
                } else if self.ace.as_ref().is_some_and(|a| a.id() == port) {
                    self.ace.as_mut().unwrap().out.credit_returned(ctx);
                } else if let Some(c) = self.caches.iter_mut().find(|c| c.id() == port) {
                    c.out.credit_returned(ctx);
                } else {
                    panic!("credit for unknown CP port");
                }
            }
            other => panic!("command processor received unexpected event {}", other.name()),
        }
    }
}
