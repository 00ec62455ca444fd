//! Untimed functional emulation of a kernel launch.
//!
//! Work-groups are independent (the launch contract forbids cross-group
//! data flow within one kernel), so they run in parallel. Each group
//! executes against a read-only snapshot of memory plus a private write
//! overlay of byte-masked 64-byte blocks; overlays merge back in
//! work-group id order, so the result is identical for any thread count
//! even when groups write overlapping blocks.

use std::collections::HashMap;

use rayon::prelude::*;

use super::{
    advance_pc, exec_alu, exec_ds, flat_accesses, flat_commit_load, AccessKind, ExecOutcome,
    LaunchSpec, Unit, Wavefront,
};
use crate::memsys::SparseMemory;

pub const LINE: u64 = 64;

#[derive(Debug, Clone, Copy)]
pub struct EmuOptions {
    /// Abort if any wavefront executes more instructions than this.
    pub max_instrs_per_wavefront: u64,
    pub parallel: bool,
}

impl Default for EmuOptions {
    fn default() -> Self {
        EmuOptions { max_instrs_per_wavefront: 50_000_000, parallel: true }
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct EmuStats {
    pub instructions: u64,
    pub workgroups: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum EmuError {
    #[error("wavefront {wf} of work-group {wg} exceeded the instruction budget")]
    BudgetExceeded { wg: u64, wf: u32 },
    #[error("invalid launch: {0}")]
    BadLaunch(String),
}

/// Snapshot reads with a private byte-masked write overlay. Accesses are
/// 4-byte-aligned dwords or single bytes, so no access crosses a block.
struct Overlay<'a> {
    base: &'a SparseMemory,
    blocks: HashMap<u64, ([u8; LINE as usize], u64)>,
}

impl<'a> Overlay<'a> {
    fn new(base: &'a SparseMemory) -> Self {
        Overlay { base, blocks: HashMap::new() }
    }

    fn read(&self, addr: u64, buf: &mut [u8]) {
        self.base.read(addr, buf);
        let block = addr / LINE;
        if let Some((data, mask)) = self.blocks.get(&block) {
            let off = (addr % LINE) as usize;
            for (i, b) in buf.iter_mut().enumerate() {
                if mask & (1u64 << (off + i)) != 0 {
                    *b = data[off + i];
                }
            }
        }
    }

    fn write(&mut self, addr: u64, bytes: &[u8]) {
        let block = addr / LINE;
        let off = (addr % LINE) as usize;
        let (data, mask) = self
            .blocks
            .entry(block)
            .or_insert_with(|| ([0u8; LINE as usize], 0));
        data[off..off + bytes.len()].copy_from_slice(bytes);
        for i in 0..bytes.len() {
            *mask |= 1u64 << (off + i);
        }
    }
}

#[derive(PartialEq, Eq, Clone, Copy)]
enum WfState {
    Running,
    AtBarrier,
    Done,
}

fn run_workgroup(
    base: &SparseMemory,
    spec: &LaunchSpec,
    wg: u64,
    opts: &EmuOptions,
) -> Result<(HashMap<u64, ([u8; LINE as usize], u64)>, u64), EmuError> {
    let items = spec.wg_items(wg);
    let wf_count = items.div_ceil(super::LANES as u32);
    let mut wfs: Vec<Wavefront> = (0..wf_count)
        .map(|i| Wavefront::for_dispatch(spec, wg as u32, i))
        .collect();
    let mut states = vec![WfState::Running; wf_count as usize];
    let mut lds = vec![0u8; spec.kernel.lds_bytes as usize];
    let mut mem = Overlay::new(base);
    let mut executed = 0u64;
    let budget = opts.max_instrs_per_wavefront;
    let mut per_wf = vec![0u64; wf_count as usize];

    // Round-robin: run each wavefront to its next barrier (or the end),
    // release the barrier once every unfinished wavefront reached it.
    loop {
        let mut any_running = false;
        for i in 0..wfs.len() {
            if states[i] != WfState::Running {
                continue;
            }
            any_running = true;
            let wf = &mut wfs[i];
            loop {
                let inst = &spec.kernel.instrs[wf.instr_index()];
                per_wf[i] += 1;
                executed += 1;
                if per_wf[i] > budget {
                    return Err(EmuError::BudgetExceeded { wg, wf: i as u32 });
                }
                match inst.op.unit() {
                    Unit::Scalar | Unit::Vector => match exec_alu(wf, inst) {
                        ExecOutcome::Continue => {}
                        ExecOutcome::Barrier => {
                            states[i] = WfState::AtBarrier;
                            break;
                        }
                        ExecOutcome::End => {
                            states[i] = WfState::Done;
                            break;
                        }
                    },
                    Unit::VMem => {
                        for acc in flat_accesses(wf, inst) {
                            match acc.kind {
                                AccessKind::LoadDword => {
                                    let mut b = [0u8; 4];
                                    mem.read(acc.addr, &mut b);
                                    flat_commit_load(wf, inst, acc.lane, &b);
                                }
                                AccessKind::LoadUbyte => {
                                    let mut b = [0u8; 1];
                                    mem.read(acc.addr, &mut b);
                                    flat_commit_load(wf, inst, acc.lane, &b);
                                }
                                AccessKind::StoreDword(v) => mem.write(acc.addr, &v.to_le_bytes()),
                                AccessKind::StoreByte(v) => mem.write(acc.addr, &[v]),
                            }
                        }
                        advance_pc(wf);
                    }
                    Unit::Lds => {
                        exec_ds(wf, inst, &mut lds);
                        advance_pc(wf);
                    }
                }
            }
        }
        if !any_running {
            if states.iter().all(|s| *s == WfState::Done) {
                break;
            }
            // Everyone unfinished is parked at the barrier: release it.
            for s in states.iter_mut() {
                if *s == WfState::AtBarrier {
                    *s = WfState::Running;
                }
            }
        }
    }
    Ok((mem.blocks, executed))
}

pub fn emulate_with(
    mem: &mut SparseMemory,
    spec: &LaunchSpec,
    opts: &EmuOptions,
) -> Result<EmuStats, EmuError> {
    spec.validate().map_err(EmuError::BadLaunch)?;
    let wg_count = spec.workgroup_count();
    let run = |wg| run_workgroup(mem, spec, wg, opts);
    let results: Result<Vec<_>, EmuError> = if opts.parallel {
        (0..wg_count).into_par_iter().map(run).collect()
    } else {
        (0..wg_count).map(run).collect()
    };
    let mut stats = EmuStats { instructions: 0, workgroups: wg_count };
    for (blocks, executed) in results? {
        stats.instructions += executed;
        for (block, (data, mask)) in blocks {
            mem.write_masked(block * LINE, &data, mask);
        }
    }
    Ok(stats)
}

pub fn emulate(mem: &mut SparseMemory, spec: &LaunchSpec) -> Result<EmuStats, EmuError> {
    emulate_with(mem, spec, &EmuOptions::default())
}
