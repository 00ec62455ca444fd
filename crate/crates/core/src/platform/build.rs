//! Assembles a full simulated machine from a [`PlatformConfig`]: driver,
//! per-GPU command processor / ACE / compute units / caches / router /
//! DRAM banks, and (on multi-GPU parts) the RDMA engines on a shared
//! PCIe bus.
//!
//! Component ids are assigned in a fixed registration order so runs are
//! reproducible and metrics reports are stable.

use std::sync::{Arc, Mutex};

use crate::engine::{ComponentId, Engine, EventKind, VirtualTime};
use crate::fabric::{ConnectionId, Endpoint, IdGen, SharedBus, TopologyBuilder};
use crate::gpu::{AceDispatcher, CommandProcessor, ComputeUnit, CuBudget, CuParams};
use crate::memsys::cache::{CacheGeometry, CacheParams, CacheUnit, Interleave, WritePolicy};
use crate::memsys::dram::{DramController, DramParams};
use crate::memsys::mapper::AddressMapper;
use crate::memsys::SparseMemory;
use crate::platform::config::{CacheCfg, PlatformConfig, TopologyKind};
use crate::platform::driver::{Cmd, Driver};
use crate::platform::router::{RdmaEngine, Router};

/// A fully wired machine, ready to run.
pub struct Platform {
    pub engine: Engine,
    pub driver: ComponentId,
    pub store: Arc<Mutex<SparseMemory>>,
    pub mapper: Arc<AddressMapper>,
    pub config: PlatformConfig,
    /// PCIe bus component and connection, when the topology has one.
    pub pcie_bus: Option<ComponentId>,
    pub pcie_conn: Option<ConnectionId>,
}

impl Platform {
    /// Schedule the driver's initial event; after this, `engine.run_*`
    /// executes the whole command list.
    pub fn start(&mut self) {
        self.engine
            .schedule(VirtualTime::ZERO, self.driver, EventKind::DriverStart)
            .unwrap();
    }
}

/// Sequential id reservation mirroring the later registration order.
#[derive(Default)]
struct Reserver {
    count: u32,
}

impl Reserver {
    fn reserve(&mut self) -> ComponentId {
        let id = ComponentId(self.count);
        self.count += 1;
        id
    }
}

/// Wire two components point-to-point and hand each its endpoint.
fn link(
    tb: &mut TopologyBuilder,
    a: (ComponentId, String),
    b: (ComponentId, String),
    latency: u64,
    credits: u32,
) -> (Endpoint, Endpoint) {
    let pa = tb.add_port(a.0, a.1);
    let pb = tb.add_port(b.0, b.1);
    tb.connect(pa, pb, latency);
    (Endpoint::new(pa, credits), Endpoint::new(pb, credits))
}

fn cache_params(
    cfg: &CacheCfg,
    policy: WritePolicy,
    interleave: Option<Interleave>,
) -> CacheParams {
    CacheParams {
        geometry: CacheGeometry { size_bytes: cfg.size_kb << 10, assoc: cfg.assoc },
        policy,
        hit_latency: cfg.hit_latency,
        mshr_capacity: None,
        interleave,
    }
}

struct GpuIds {
    cp: ComponentId,
    ace: Option<ComponentId>,
    cus: Vec<ComponentId>,
    l1is: Vec<ComponentId>,
    l1vs: Vec<ComponentId>,
    router: ComponentId,
    l2s: Vec<ComponentId>,
    drams: Vec<ComponentId>,
    rdma: Option<ComponentId>,
}

/// Endpoint bins filled while wiring, consumed at construction time.
struct GpuEps {
    cp_driver: Option<Endpoint>,
    cp_ace: Option<Endpoint>,
    cp_caches: Vec<Endpoint>,
    ace_cp: Option<Endpoint>,
    /// ACE-side endpoints toward CUs, possibly spanning GPUs (U-MGPU).
    ace_cus: Vec<Endpoint>,
    cu_ace: Vec<Option<Endpoint>>,
    cu_fetch: Vec<Option<Endpoint>>,
    cu_vmem: Vec<Option<Endpoint>>,
    l1i_tops: Vec<Vec<Endpoint>>,
    l1i_bottom: Vec<Option<Endpoint>>,
    l1v_tops: Vec<Vec<Endpoint>>,
    l1v_bottom: Vec<Option<Endpoint>>,
    router_tops: Vec<Endpoint>,
    router_l2s: Vec<Option<Endpoint>>,
    router_rdma: Option<Endpoint>,
    l2_router: Vec<Option<Endpoint>>,
    l2_cp: Vec<Option<Endpoint>>,
    l2_bottom: Vec<Option<Endpoint>>,
    dram_top: Vec<Option<Endpoint>>,
    rdma_from_router: Option<Endpoint>,
    rdma_to_router: Option<Endpoint>,
    rdma_bus: Option<Endpoint>,
}

impl GpuEps {
    fn empty(ncu: usize, nl1i: usize, nbank: usize) -> GpuEps {
        GpuEps {
            cp_driver: None,
            cp_ace: None,
            cp_caches: Vec::new(),
            ace_cp: None,
            ace_cus: Vec::new(),
            cu_ace: (0..ncu).map(|_| None).collect(),
            cu_fetch: (0..ncu).map(|_| None).collect(),
            cu_vmem: (0..ncu).map(|_| None).collect(),
            l1i_tops: (0..nl1i).map(|_| Vec::new()).collect(),
            l1i_bottom: (0..nl1i).map(|_| None).collect(),
            l1v_tops: (0..ncu).map(|_| Vec::new()).collect(),
            l1v_bottom: (0..ncu).map(|_| None).collect(),
            router_tops: Vec::new(),
            router_l2s: (0..nbank).map(|_| None).collect(),
            router_rdma: None,
            l2_router: (0..nbank).map(|_| None).collect(),
            l2_cp: (0..nbank).map(|_| None).collect(),
            l2_bottom: (0..nbank).map(|_| None).collect(),
            dram_top: (0..nbank).map(|_| None).collect(),
            rdma_from_router: None,
            rdma_to_router: None,
            rdma_bus: None,
        }
    }
}

pub fn build(config: PlatformConfig, cmds: Vec<Cmd>) -> Platform {
    config.validate().expect("invalid platform config");
    let g = config.gpus as usize;
    let ncu = config.gpu.cu_count as usize;
    let per_l1i = config.gpu.cus_per_l1i as usize;
    let nl1i = ncu / per_l1i;
    let nbank = config.gpu.l2_units as usize;
    let l1v_on = config.gpu.l1v.enabled;
    let has_pcie = g > 1;
    let umgpu = config.topology == TopologyKind::Umgpu;
    let ace_enabled = |gi: usize| !umgpu || gi == 0;
    let lk = config.link;
    let cr = lk.credits;

    let mapper = Arc::new(AddressMapper::new(
        config.scheme,
        config.gpus,
        config.gpu.dram_banks,
        config.dram_bank_bytes(),
    ));
    let store = Arc::new(Mutex::new(SparseMemory::new()));

    // ---- Phase 1: reserve component ids in registration order. ----
    let mut rsv = Reserver::default();
    let driver_id = rsv.reserve();
    let gpus: Vec<GpuIds> = (0..g)
        .map(|gi| GpuIds {
            cp: rsv.reserve(),
            ace: ace_enabled(gi).then(|| rsv.reserve()),
            cus: (0..ncu).map(|_| rsv.reserve()).collect(),
            l1is: (0..nl1i).map(|_| rsv.reserve()).collect(),
            l1vs: if l1v_on { (0..ncu).map(|_| rsv.reserve()).collect() } else { Vec::new() },
            router: rsv.reserve(),
            l2s: (0..nbank).map(|_| rsv.reserve()).collect(),
            drams: (0..nbank).map(|_| rsv.reserve()).collect(),
            rdma: has_pcie.then(|| rsv.reserve()),
        })
        .collect();
    let bus_id = has_pcie.then(|| rsv.reserve());

    // ---- Phase 2: ports and connections. ----
    let mut tb = TopologyBuilder::new();
    let mut eps: Vec<GpuEps> = (0..g).map(|_| GpuEps::empty(ncu, nl1i, nbank)).collect();
    let mut driver_cps: Vec<Endpoint> = Vec::new();

    for gi in 0..g {
        let ids = &gpus[gi];
        // Driver <-> CP.
        let (d, c) = link(
            &mut tb,
            (driver_id, format!("driver.cp{gi}")),
            (ids.cp, format!("gpu{gi}.cp.driver")),
            lk.ctrl,
            cr,
        );
        driver_cps.push(d);
        eps[gi].cp_driver = Some(c);
        // CP <-> ACE.
        if let Some(ace) = ids.ace {
            let (c, a) = link(
                &mut tb,
                (ids.cp, format!("gpu{gi}.cp.ace")),
                (ace, format!("gpu{gi}.ace.cp")),
                lk.ctrl,
                cr,
            );
            eps[gi].cp_ace = Some(c);
            eps[gi].ace_cp = Some(a);
        }
        // CU fetch <-> shared L1I; CU vmem <-> L1V or router.
        for cu in 0..ncu {
            let l1i = cu / per_l1i;
            let (f, t) = link(
                &mut tb,
                (ids.cus[cu], format!("gpu{gi}.cu{cu}.fetch")),
                (ids.l1is[l1i], format!("gpu{gi}.l1i{l1i}.cu{cu}")),
                lk.cu_l1i,
                cr,
            );
            eps[gi].cu_fetch[cu] = Some(f);
            eps[gi].l1i_tops[l1i].push(t);
            if l1v_on {
                let (v, t) = link(
                    &mut tb,
                    (ids.cus[cu], format!("gpu{gi}.cu{cu}.vmem")),
                    (ids.l1vs[cu], format!("gpu{gi}.l1v{cu}.cu")),
                    lk.cu_l1i,
                    cr,
                );
                eps[gi].cu_vmem[cu] = Some(v);
                eps[gi].l1v_tops[cu].push(t);
                let (b, r) = link(
                    &mut tb,
                    (ids.l1vs[cu], format!("gpu{gi}.l1v{cu}.bottom")),
                    (ids.router, format!("gpu{gi}.router.l1v{cu}")),
                    lk.cu_router,
                    cr,
                );
                eps[gi].l1v_bottom[cu] = Some(b);
                eps[gi].router_tops.push(r);
            } else {
                let (v, r) = link(
                    &mut tb,
                    (ids.cus[cu], format!("gpu{gi}.cu{cu}.vmem")),
                    (ids.router, format!("gpu{gi}.router.cu{cu}")),
                    lk.cu_router,
                    cr,
                );
                eps[gi].cu_vmem[cu] = Some(v);
                eps[gi].router_tops.push(r);
            }
        }
        // L1I bottoms into the router.
        for i in 0..nl1i {
            let (b, r) = link(
                &mut tb,
                (ids.l1is[i], format!("gpu{gi}.l1i{i}.bottom")),
                (ids.router, format!("gpu{gi}.router.l1i{i}")),
                lk.l1_router,
                cr,
            );
            eps[gi].l1i_bottom[i] = Some(b);
            eps[gi].router_tops.push(r);
        }
        // Router <-> L2 banks; L2 <-> DRAM banks.
        for b in 0..nbank {
            let (r, t) = link(
                &mut tb,
                (ids.router, format!("gpu{gi}.router.l2.{b}")),
                (ids.l2s[b], format!("gpu{gi}.l2.{b}.router")),
                lk.router_l2,
                cr,
            );
            eps[gi].router_l2s[b] = Some(r);
            eps[gi].l2_router[b] = Some(t);
            let (bo, d) = link(
                &mut tb,
                (ids.l2s[b], format!("gpu{gi}.l2.{b}.bottom")),
                (ids.drams[b], format!("gpu{gi}.dram{b}.top")),
                lk.l2_dram,
                cr,
            );
            eps[gi].l2_bottom[b] = Some(bo);
            eps[gi].dram_top[b] = Some(d);
        }
        // CP flush links: one per cache, added as that cache's last top.
        for i in 0..nl1i {
            let (c, t) = link(
                &mut tb,
                (ids.cp, format!("gpu{gi}.cp.l1i{i}")),
                (ids.l1is[i], format!("gpu{gi}.l1i{i}.cp")),
                lk.ctrl,
                cr,
            );
            eps[gi].cp_caches.push(c);
            eps[gi].l1i_tops[i].push(t);
        }
        if l1v_on {
            for i in 0..ncu {
                let (c, t) = link(
                    &mut tb,
                    (ids.cp, format!("gpu{gi}.cp.l1v{i}")),
                    (ids.l1vs[i], format!("gpu{gi}.l1v{i}.cp")),
                    lk.ctrl,
                    cr,
                );
                eps[gi].cp_caches.push(c);
                eps[gi].l1v_tops[i].push(t);
            }
        }
        for b in 0..nbank {
            let (c, t) = link(
                &mut tb,
                (ids.cp, format!("gpu{gi}.cp.l2.{b}")),
                (ids.l2s[b], format!("gpu{gi}.l2.{b}.cp")),
                lk.ctrl,
                cr,
            );
            eps[gi].cp_caches.push(c);
            eps[gi].l2_cp[b] = Some(t);
        }
    }

    // ACE <-> CU dispatch links. On U-MGPU, ACE 0 drives every CU in the
    // system (remote CUs over the slower link); otherwise each GPU's ACE
    // drives its own CUs.
    for gi in 0..g {
        let Some(ace) = gpus[gi].ace else { continue };
        let targets: Vec<usize> = if umgpu { (0..g).collect() } else { vec![gi] };
        for tg in targets {
            let latency = if tg == gi { lk.ace_cu } else { lk.ace_cu_remote };
            for cu in 0..ncu {
                let (a, c) = link(
                    &mut tb,
                    (ace, format!("gpu{gi}.ace.cu{tg}.{cu}")),
                    (gpus[tg].cus[cu], format!("gpu{tg}.cu{cu}.ace")),
                    latency,
                    cr,
                );
                eps[gi].ace_cus.push(a);
                eps[tg].cu_ace[cu] = Some(c);
            }
        }
    }

    // Router <-> RDMA and the PCIe bus.
    let mut pcie_conn = None;
    let mut bus_ports: Vec<crate::fabric::PortId> = Vec::new();
    if let Some(bus) = bus_id {
        let conn = tb.add_bus(bus, config.pcie.latency, config.pcie.bytes_per_cycle);
        pcie_conn = Some(conn);
        for gi in 0..g {
            let rdma = gpus[gi].rdma.unwrap();
            let (r, f) = link(
                &mut tb,
                (gpus[gi].router, format!("gpu{gi}.router.rdma")),
                (rdma, format!("gpu{gi}.rdma.router_out")),
                lk.rdma_router,
                cr,
            );
            eps[gi].router_rdma = Some(r);
            eps[gi].rdma_from_router = Some(f);
            let (t, r2) = link(
                &mut tb,
                (rdma, format!("gpu{gi}.rdma.router_in")),
                (gpus[gi].router, format!("gpu{gi}.router.rdma_in")),
                lk.rdma_router,
                cr,
            );
            eps[gi].rdma_to_router = Some(t);
            eps[gi].router_tops.push(r2);
            let p = tb.add_port(rdma, format!("gpu{gi}.rdma.bus"));
            tb.attach_to_bus(conn, p);
            eps[gi].rdma_bus = Some(Endpoint::new(p, cr));
            bus_ports.push(p);
        }
    }

    let topo = tb.build();
    let mut engine = Engine::new(topo);

    // ---- Phase 3: construct and register in reserved order. ----
    let reg = |engine: &mut Engine, expect: ComponentId, name: String, c: Box<dyn crate::engine::Component>| {
        let got = engine.register(name, c);
        assert_eq!(got, expect, "registration order drifted from reservation");
    };

    let launchable: Vec<bool> = (0..g).map(ace_enabled).collect();
    reg(
        &mut engine,
        driver_id,
        "driver".into(),
        Box::new(Driver::new(
            driver_cps,
            launchable,
            store.clone(),
            cmds,
            IdGen::new(driver_id),
        )),
    );

    let cu_params = CuParams {
        wavefront_slots: config.gpu.wavefront_slots,
        lds_bytes: config.gpu.lds_kb * 1024,
    };
    let budget = CuBudget {
        wavefront_slots: config.gpu.wavefront_slots,
        lds_bytes: config.gpu.lds_kb * 1024,
    };

    for gi in 0..g {
        let ids = &gpus[gi];
        let e = &mut eps[gi];
        reg(
            &mut engine,
            ids.cp,
            format!("gpu{gi}.cp"),
            Box::new(CommandProcessor::new(
                e.cp_driver.take().unwrap(),
                e.cp_ace.take(),
                std::mem::take(&mut e.cp_caches),
                IdGen::new(ids.cp),
            )),
        );
        if let Some(ace) = ids.ace {
            reg(
                &mut engine,
                ace,
                format!("gpu{gi}.ace"),
                Box::new(AceDispatcher::new(
                    eps[gi].ace_cp.take().unwrap(),
                    std::mem::take(&mut eps[gi].ace_cus),
                    budget,
                    IdGen::new(ace),
                )),
            );
        }
        for cu in 0..ncu {
            let e = &mut eps[gi];
            reg(
                &mut engine,
                ids.cus[cu],
                format!("gpu{gi}.cu{cu}"),
                Box::new(ComputeUnit::new(
                    cu_params,
                    e.cu_ace[cu].take().expect("CU without a dispatcher"),
                    e.cu_fetch[cu].take().unwrap(),
                    e.cu_vmem[cu].take().unwrap(),
                    IdGen::new(ids.cus[cu]),
                )),
            );
        }
        for i in 0..nl1i {
            let e = &mut eps[gi];
            reg(
                &mut engine,
                ids.l1is[i],
                format!("gpu{gi}.l1i{i}"),
                Box::new(CacheUnit::new(
                    cache_params(&config.gpu.l1i, WritePolicy::WriteAround, None),
                    std::mem::take(&mut e.l1i_tops[i]),
                    e.l1i_bottom[i].take().unwrap(),
                    IdGen::new(ids.l1is[i]),
                )),
            );
        }
        if l1v_on {
            for i in 0..ncu {
                let e = &mut eps[gi];
                reg(
                    &mut engine,
                    ids.l1vs[i],
                    format!("gpu{gi}.l1v{i}"),
                    Box::new(CacheUnit::new(
                        cache_params(&config.gpu.l1v, WritePolicy::WriteAround, None),
                        std::mem::take(&mut e.l1v_tops[i]),
                        e.l1v_bottom[i].take().unwrap(),
                        IdGen::new(ids.l1vs[i]),
                    )),
                );
            }
        }
        {
            let e = &mut eps[gi];
            let tops = std::mem::take(&mut e.router_tops);
            let l2s = e.router_l2s.iter_mut().map(|x| x.take().unwrap()).collect();
            let rdma = e.router_rdma.take();
            reg(
                &mut engine,
                ids.router,
                format!("gpu{gi}.router"),
                Box::new(Router::new(gi as u32, mapper.clone(), tops, l2s, rdma)),
            );
        }
        for b in 0..nbank {
            let e = &mut eps[gi];
            let mut tops = vec![e.l2_router[b].take().unwrap()];
            tops.push(e.l2_cp[b].take().unwrap());
            reg(
                &mut engine,
                ids.l2s[b],
                format!("gpu{gi}.l2.{b}"),
                Box::new(CacheUnit::new(
                    cache_params(
                        &config.gpu.l2,
                        WritePolicy::WriteBack,
                        Some(Interleave {
                            span: crate::memsys::mapper::PAGE,
                            step: u64::from(config.gpu.l2_units),
                        }),
                    ),
                    tops,
                    e.l2_bottom[b].take().unwrap(),
                    IdGen::new(ids.l2s[b]),
                )),
            );
        }
        for b in 0..nbank {
            let e = &mut eps[gi];
            reg(
                &mut engine,
                ids.drams[b],
                format!("gpu{gi}.dram{b}"),
                Box::new(DramController::new(
                    e.dram_top[b].take().unwrap(),
                    IdGen::new(ids.drams[b]),
                    DramParams {
                        latency: config.gpu.dram_latency,
                        service_cycles: config.gpu.dram_service,
                        capacity_bytes: config.dram_bank_bytes(),
                    },
                    store.clone(),
                )),
            );
        }
        if let Some(rdma) = ids.rdma {
            let peers = bus_ports.clone();
            let e = &mut eps[gi];
            reg(
                &mut engine,
                rdma,
                format!("gpu{gi}.rdma"),
                Box::new(RdmaEngine::new(
                    gi as u32,
                    mapper.clone(),
                    e.rdma_from_router.take().unwrap(),
                    e.rdma_to_router.take().unwrap(),
                    e.rdma_bus.take().unwrap(),
                    peers,
                )),
            );
        }
    }
    if let Some(bus) = bus_id {
        reg(
            &mut engine,
            bus,
            "pcie0".into(),
            Box::new(SharedBus::new(config.pcie.latency, config.pcie.bytes_per_cycle)),
        );
    }

    Platform {
        engine,
        driver: driver_id,
        store,
        mapper,
        config,
        pcie_bus: bus_id,
        pcie_conn,
    }
}
