//! Host-side driver. Executes a prepared command list: functional memory
//! writes (done in zero simulated time, modelling data staged before the
//! region of interest), host compute steps, and kernel launch batches.
//!
//! After every launch batch completes, the driver commands a cache flush
//! of every GPU — caches are not coherent across GPUs, so dirty data must
//! reach DRAM before the host or another kernel may read it.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use crate::engine::{Component, Ctx, EventKind, VirtualTime};
use crate::fabric::{Endpoint, IdGen, ReqKind, Request};
use crate::isa::LaunchSpec;
use crate::memsys::sparse::SparseMemory;
use crate::proto::{Ctrl, Launch, LaunchId};

/// A host compute step run between launches (e.g. a reduction the real
/// application would do on the CPU).
pub type HostFn = Box<dyn FnMut(&mut SparseMemory) + Send>;

pub enum Cmd {
    /// Functional write into simulated memory (data and code staging).
    MemWrite { addr: u64, data: Vec<u8> },
    /// Host-side compute over simulated memory.
    Host(HostFn),
    /// Concurrent kernel launches, one per (command processor, spec).
    /// The driver waits for all of them, then flushes all caches.
    Launch(Vec<(usize, LaunchSpec)>),
}

enum Phase {
    Idle,
    WaitDone(u32),
    WaitFlush(u32),
    Finished,
}

pub struct Driver {
    cps: Vec<Endpoint>,
    /// Which command processors accept launches (on U-MGPU only GPU 0's).
    launchable: Vec<bool>,
    store: Arc<Mutex<SparseMemory>>,
    cmds: VecDeque<Cmd>,
    ids: IdGen,
    next_launch: LaunchId,
    phase: Phase,
}

impl Driver {
    pub fn new(
        cps: Vec<Endpoint>,
        launchable: Vec<bool>,
        store: Arc<Mutex<SparseMemory>>,
        cmds: Vec<Cmd>,
        ids: IdGen,
    ) -> Driver {
        assert_eq!(cps.len(), launchable.len());
        Driver {
            cps,
            launchable,
            store,
            cmds: cmds.into(),
            ids,
            next_launch: 0,
            phase: Phase::Idle,
        }
    }

    fn process(&mut self, ctx: &mut Ctx) {
        loop {
            match self.cmds.pop_front() {
                None => {
                    self.phase = Phase::Finished;
                    ctx.count("driver_finished", 1);
                    return;
                }
                Some(Cmd::MemWrite { addr, data }) => {
                    self.store.lock().unwrap().write(addr, &data);
                    ctx.count("host_bytes_written", data.len() as u64);
                }
                Some(Cmd::Host(mut f)) => {
                    f(&mut self.store.lock().unwrap());
                    ctx.count("host_steps", 1);
                }
                Some(Cmd::Launch(batch)) => {
                    assert!(!batch.is_empty(), "empty launch batch");
                    let n = batch.len() as u32;
                    for (cp, spec) in batch {
                        assert!(
                            self.launchable[cp],
                            "launch directed at a disabled command processor"
                        );
                        spec.validate().expect("invalid launch");
                        let id = self.next_launch;
                        self.next_launch += 1;
                        let wg_count = spec.workgroup_count();
                        let launch = Arc::new(Launch { id, spec, wg_first: 0, wg_count });
                        // Timing mark consumed by the metrics hook: the
                        // delta encodes the launch id (ids start at 0,
                        // zero deltas are dropped).
                        ctx.count("kernel_launch_mark", id + 1);
                        let req = Request::new(
                            self.ids.next(),
                            ReqKind::Ctrl(Ctrl::KernelLaunch(launch)),
                        );
                        self.cps[cp].out.send(ctx, req);
                    }
                    self.phase = Phase::WaitDone(n);
                    return;
                }
            }
        }
    }

    fn start_flush(&mut self, ctx: &mut Ctx) {
        self.phase = Phase::WaitFlush(self.cps.len() as u32);
        for i in 0..self.cps.len() {
            let req = Request::new(
                self.ids.next(),
                ReqKind::Ctrl(Ctrl::CacheFlush { launch: self.next_launch }),
            );
            self.cps[i].out.send(ctx, req);
        }
    }

    fn on_ctrl(&mut self, ctrl: Ctrl, ctx: &mut Ctx) {
        match ctrl {
            Ctrl::KernelDone { launch } => {
                ctx.count("kernel_done_mark", launch + 1);
                let Phase::WaitDone(n) = &mut self.phase else {
                    panic!("kernel done while not waiting for one");
                };
                *n -= 1;
                if *n == 0 {
                    self.start_flush(ctx);
                }
            }
            Ctrl::CacheFlushed { .. } => {
                let Phase::WaitFlush(n) = &mut self.phase else {
                    panic!("flush ack while not flushing");
                };
                *n -= 1;
                if *n == 0 {
                    self.phase = Phase::Idle;
                    self.process(ctx);
                }
            }
            other => panic!("driver received {}", other.name()),
        }
    }
}

impl Component for Driver {
    fn handle(&mut self, _time: VirtualTime, kind: EventKind, ctx: &mut Ctx) {
        match kind {
            EventKind::DriverStart => self.process(ctx),
            EventKind::Deliver { port, req } => {
                let i = self
                    .cps
                    .iter()
                    .position(|c| c.id() == port)
                    .expect("deliver to unknown driver port");
                self.cps[i].inp.deliver(req);
                while let Some(req) = self.cps[i].inp.retrieve(ctx) {
                    match req.kind {
                        ReqKind::Ctrl(c) => self.on_ctrl(c, ctx),
                        other => panic!("driver received {}", other.name()),
                    }
                }
            }
            EventKind::CreditReturn { port } => {
                let c = self
                    .cps
                    .iter_mut()
                    .find(|c| c.id() == port)
                    .expect("credit for unknown driver port");
                c.out.credit_returned(ctx);
            }
            other => panic!("driver received unexpected event {}", other.name()),
        }
    }
}
