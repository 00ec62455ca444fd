//! Built-in workloads: four latency micro-benchmarks and seven
//! benchmarks covering the five collaborative multi-GPU execution
//! patterns (partitioned data, adjacent access, gather, scatter,
//! irregular).
//!
//! A workload builder is a pure function from (platform shape,
//! parameters) to a [`Plan`]: the driver command list, the number of
//! kernel launches it will produce, and a set of output checks computed
//! by an independent host oracle. Oracles only ever consume the workload
//! inputs — never simulator state — so a plan carries its expected
//! output bytes from the moment it is built.

pub mod aes;
pub mod bs;
pub mod fir;
pub mod gd;
pub mod km;
pub mod micro;
pub mod mt;
pub mod sc;

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::isa::emu::emulate;
use crate::isa::{Kernel, LaunchSpec};
use crate::memsys::SparseMemory;
use crate::memsys::mapper::AddressMapper;
use crate::platform::config::{PlatformConfig, TopologyKind};
use crate::platform::{Allocator, Cmd};

pub const NAMES: &[&str] = &[
    "alu",
    "l1-access",
    "l2-access",
    "dram-access",
    "aes",
    "bs",
    "fir",
    "gd",
    "km",
    "mt",
    "sc",
];

/// Free-form numeric parameter overrides (`--param n=1024`).
#[derive(Debug, Clone, Default)]
pub struct Params(pub HashMap<String, u64>);

impl Params {
    pub fn get(&self, key: &str, default: u64) -> u64 {
        self.0.get(key).copied().unwrap_or(default)
    }
}

/// One expected-output region with a label for diff reports.
pub struct Check {
    pub label: String,
    pub addr: u64,
    pub expect: Vec<u8>,
}

/// Everything the runner needs to execute and verify one workload.
pub struct Plan {
    pub name: String,
    pub cmds: Vec<Cmd>,
    pub checks: Vec<Check>,
    /// Number of kernel launches the command list will produce.
    pub launches: u64,
}

/// The platform shape a plan is built against.
#[derive(Clone)]
pub struct PlanEnv {
    pub topology: TopologyKind,
    pub gpus: u32,
    pub mapper: Arc<AddressMapper>,
}

impl PlanEnv {
    pub fn of(config: &PlatformConfig) -> PlanEnv {
        PlanEnv {
            topology: config.topology,
            gpus: config.gpus,
            mapper: Arc::new(AddressMapper::new(
                config.scheme,
                config.gpus,
                config.gpu.dram_banks,
                config.dram_bank_bytes(),
            )),
        }
    }

    /// How many data partitions / concurrent launches a plan uses:
    /// D-MGPU drives each GPU explicitly, every other topology is
    /// programmed as a single device.
    pub fn parts(&self) -> usize {
        if self.topology == TopologyKind::Dmgpu {
            self.gpus as usize
        } else {
            1
        }
    }

    /// Placement hint for buffers belonging to partition `p`.
    pub fn hint(&self, p: usize) -> Option<u32> {
        (self.topology == TopologyKind::Dmgpu).then_some(p as u32)
    }

    /// Command processor that partition `p`'s kernels launch on.
    pub fn cp_of(&self, p: usize) -> usize {
        if self.topology == TopologyKind::Dmgpu {
            p
        } else {
            0
        }
    }

    pub fn allocator(&self) -> Allocator {
        Allocator::new(self.mapper.clone())
    }
}

/// Per-partition staging of a kernel: the code image is written into
/// each partition so instruction fetches stay local on D-MGPU.
pub struct StagedKernel {
    pub kernel: Arc<Kernel>,
    /// code_base per partition.
    pub bases: Vec<u64>,
}

impl StagedKernel {
    pub fn stage(env: &PlanEnv, alloc: &mut Allocator, cmds: &mut Vec<Cmd>, kernel: Arc<Kernel>) -> StagedKernel {
        let image = kernel.image();
        let bases = (0..env.parts())
            .map(|p| {
                let base = alloc.alloc(image.len() as u64, env.hint(p));
                cmds.push(Cmd::MemWrite { addr: base, data: image.clone() });
                base
            })
            .collect();
        StagedKernel { kernel, bases }
    }

    pub fn spec(&self, part: usize, grid_size: u64, wg_size: u32, kernarg: Vec<u32>) -> LaunchSpec {
        LaunchSpec {
            kernel: self.kernel.clone(),
            code_base: self.bases[part],
            grid_size,
            wg_size,
            kernarg,
        }
    }
}

pub fn lohi(addr: u64) -> [u32; 2] {
    [addr as u32, (addr >> 32) as u32]
}

pub fn f32_bytes(vals: &[f32]) -> Vec<u8> {
    vals.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn u32_bytes(vals: &[u32]) -> Vec<u8> {
    vals.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Fixed-seed generator for workload inputs: every build of the same
/// workload sees identical data, on every platform.
pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Build the named workload's plan. Unknown names are an error so the
/// CLI can reject them before constructing an engine.
pub fn build_plan(name: &str, env: &PlanEnv, params: &Params) -> Result<Plan, String> {
    match name {
        "alu" | "l1-access" | "l2-access" | "dram-access" => micro::build(name, env, params),
        "aes" => aes::build(env, params),
        "bs" => bs::build(env, params),
        "fir" => fir::build(env, params),
        "gd" => gd::build(env, params),
        "km" => km::build(env, params),
        "mt" => mt::build(env, params),
        "sc" => sc::build(env, params),
        other => Err(format!(
            "unknown workload `{other}` (available: {})",
            NAMES.join(", ")
        )),
    }
}

/// Functionally execute a plan's command list on a fresh memory: writes
/// and host steps apply directly, launches run through the emulator in
/// batch order. Returns the final memory and the executed wavefront
/// instruction count.
pub fn emulate_plan(cmds: Vec<Cmd>) -> Result<(SparseMemory, u64), String> {
    let mut mem = SparseMemory::new();
    let mut instructions = 0;
    for cmd in cmds {
        match cmd {
            Cmd::MemWrite { addr, data } => mem.write(addr, &data),
            Cmd::Host(mut f) => f(&mut mem),
            Cmd::Launch(batch) => {
                for (_, spec) in batch {
                    let stats = emulate(&mut mem, &spec).map_err(|e| e.to_string())?;
                    instructions += stats.instructions;
                }
            }
        }
    }
    Ok((mem, instructions))
}

/// Compare every check region against `mem`; returns one line per
/// mismatching region for the diff report.
pub fn verify(checks: &[Check], mem: &SparseMemory) -> Vec<String> {
    let mut report = Vec::new();
    for c in checks {
        let mut got = vec![0u8; c.expect.len()];
        mem.read(c.addr, &mut got);
        if got != c.expect {
            let first = got
                .iter()
                .zip(&c.expect)
                .position(|(g, e)| g != e)
                .unwrap();
            let n = got.iter().zip(&c.expect).filter(|(g, e)| g != e).count();
            report.push(format!(
                "{}: {} of {} bytes differ, first at +{:#x} (got {:#04x}, expected {:#04x})",
                c.label,
                n,
                c.expect.len(),
                first,
                got[first],
                c.expect[first]
            ));
        }
    }
    report
}
