//! A GCN3-inspired mini-SIMT instruction set and its functional
//! semantics, shared by pure emulation and the timed compute-unit model.
//! The timed model changes *when* an instruction's effects land, never
//! *what* they are.

pub mod asm;
pub mod emu;

use std::sync::Arc;

/// Every instruction occupies exactly 4 bytes of simulated instruction
/// memory, so one 64-byte cache line holds 16 instructions.
pub const INSTR_BYTES: u64 = 4;
pub const LANES: usize = 64;
pub const MAX_WAVEFRONTS_PER_GROUP: u32 = 8;
pub const WG_SIZE_MAX: u32 = MAX_WAVEFRONTS_PER_GROUP * LANES as u32;
pub const SGPR_COUNT: usize = 64;

/// Scalar registers with dispatch-time conventions: kernel arguments are
/// pre-loaded into s0..s15; s16 = flat work-group id, s17 = work-group
/// size, s18 = wavefront index within the group, s19 = flat grid size.
pub const SGPR_KERNARG_MAX: usize = 16;
pub const SGPR_WG_ID: usize = 16;
pub const SGPR_WG_SIZE: usize = 17;
pub const SGPR_WF_INDEX: usize = 18;
pub const SGPR_GRID_SIZE: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    // scalar
    SMov,
    SAddU32,
    SMulU32,
    SAndU32,
    SCmpLtU32,
    SCbranchScc1,
    SBranch,
    SBarrier,
    SEndpgm,
    // vector
    VMovB32,
    VAddU32,
    VSubU32,
    VMulLoU32,
    VAddF32,
    VSubF32,
    VMulF32,
    VMacF32,
    VXorB32,
    VAndB32,
    VOrB32,
    VLshlrevB32,
    VLshrrevB32,
    VCmpLtU32,
    VCmpLtF32,
    VCndmaskB32,
    VMbcnt,
    // flat memory
    FlatLoadDword,
    FlatStoreDword,
    FlatLoadUbyte,
    FlatStoreByte,
    // local data share
    DsReadB32,
    DsWriteB32,
}

/// Which execution unit (and decoder) services an opcode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Unit {
    Scalar,
    Vector,
    VMem,
    Lds,
}

impl Opcode {
    pub fn unit(self) -> Unit {
        use Opcode::*;
        match self {
            SMov | SAddU32 | SMulU32 | SAndU32 | SCmpLtU32 | SCbranchScc1 | SBranch
            | SBarrier | SEndpgm => Unit::Scalar,
            VMovB32 | VAddU32 | VSubU32 | VMulLoU32 | VAddF32 | VSubF32 | VMulF32 | VMacF32
            | VXorB32 | VAndB32 | VOrB32 | VLshlrevB32 | VLshrrevB32 | VCmpLtU32 | VCmpLtF32
            | VCndmaskB32 | VMbcnt => Unit::Vector,
            FlatLoadDword | FlatStoreDword | FlatLoadUbyte | FlatStoreByte => Unit::VMem,
            DsReadB32 | DsWriteB32 => Unit::Lds,
        }
    }

    pub fn mnemonic(self) -> &'static str {
        use Opcode::*;
        match self {
            SMov => "s_mov",
            SAddU32 => "s_add_u32",
            SMulU32 => "s_mul_u32",
            SAndU32 => "s_and_u32",
            SCmpLtU32 => "s_cmp_lt_u32",
            SCbranchScc1 => "s_cbranch_scc1",
            SBranch => "s_branch",
            SBarrier => "s_barrier",
            SEndpgm => "s_endpgm",
            VMovB32 => "v_mov_b32",
            VAddU32 => "v_add_u32",
            VSubU32 => "v_sub_u32",
            VMulLoU32 => "v_mul_lo_u32",
            VAddF32 => "v_add_f32",
            VSubF32 => "v_sub_f32",
            VMulF32 => "v_mul_f32",
            VMacF32 => "v_mac_f32",
            VXorB32 => "v_xor_b32",
            VAndB32 => "v_and_b32",
            VOrB32 => "v_or_b32",
            VLshlrevB32 => "v_lshlrev_b32",
            VLshrrevB32 => "v_lshrrev_b32",
            VCmpLtU32 => "v_cmp_lt_u32",
            VCmpLtF32 => "v_cmp_lt_f32",
            VCndmaskB32 => "v_cndmask_b32",
            VMbcnt => "v_mbcnt",
            FlatLoadDword => "flat_load_dword",
            FlatStoreDword => "flat_store_dword",
            FlatLoadUbyte => "flat_load_ubyte",
            FlatStoreByte => "flat_store_byte",
            DsReadB32 => "ds_read_b32",
            DsWriteB32 => "ds_write_b32",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    SReg(u8),
    VReg(u8),
    Lit(u32),
    /// Aligned scalar pair s[n:n+1] forming a 64-bit memory base.
    SPair(u8),
    /// Branch target, resolved by the assembler to an absolute
    /// instruction index within the kernel.
    Target(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub op: Opcode,
    pub ops: Vec<Operand>,
}

/// A loaded kernel: decoded instruction records plus resource needs.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub name: String,
    pub instrs: Vec<Instruction>,
    pub vgpr_count: u32,
    pub lds_bytes: u32,
}

impl Kernel {
    pub fn code_bytes(&self) -> u64 {
        self.instrs.len() as u64 * INSTR_BYTES
    }

    /// The bytes stored in instruction memory: each slot holds its own
    /// instruction index as a little-endian u32. The fetch path carries
    /// these bytes; decode checks them against the wavefront's pc.
    pub fn image(&self) -> Vec<u8> {
        (0..self.instrs.len() as u32).flat_map(u32::to_le_bytes).collect()
    }
}

/// Everything needed to launch a kernel: the code (placed at
/// `code_base` in simulated memory), the grid, and pre-resolved kernel
/// arguments.
#[derive(Debug, Clone)]
pub struct LaunchSpec {
    pub kernel: Arc<Kernel>,
    pub code_base: u64,
    pub grid_size: u64,
    pub wg_size: u32,
    pub kernarg: Vec<u32>,
}

impl LaunchSpec {
    pub fn workgroup_count(&self) -> u64 {
        self.grid_size.div_ceil(u64::from(self.wg_size))
    }

    /// Flat work-item count of work-group `wg`.
    pub fn wg_items(&self, wg: u64) -> u32 {
        let start = wg * u64::from(self.wg_size);
        (self.grid_size - start).min(u64::from(self.wg_size)) as u32
    }

    pub fn wavefronts_per_group(&self) -> u32 {
        self.wg_size.div_ceil(LANES as u32)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.wg_size == 0 || self.wg_size > WG_SIZE_MAX {
            return Err(format!("work-group size {} outside 1..={}", self.wg_size, WG_SIZE_MAX));
        }
        if self.grid_size == 0 {
            return Err("empty grid".into());
        }
        if self.kernarg.len() > SGPR_KERNARG_MAX {
            return Err(format!("{} kernel arguments exceed {}", self.kernarg.len(), SGPR_KERNARG_MAX));
        }
        Ok(())
    }
}

/// 64-lane SIMT execution state.
#[derive(Debug, Clone)]
pub struct Wavefront {
    pub pc: u64,
    pub code_base: u64,
    pub code_len: u64,
    pub sgpr: [u32; SGPR_COUNT],
    /// `vgpr_count * 64` registers, indexed `reg * 64 + lane`.
    pub vgpr: Vec<u32>,
    pub exec: u64,
    pub vcc: u64,
    pub scc: bool,
    pub wg_id: u32,
    pub wf_index: u32,
}

impl Wavefront {
    pub fn for_dispatch(spec: &LaunchSpec, wg_id: u32, wf_index: u32) -> Wavefront {
        let items = spec.wg_items(u64::from(wg_id));
        let first_lane = wf_index * LANES as u32;
        let active = items.saturating_sub(first_lane).min(LANES as u32);
        assert!(active > 0, "dispatched wavefront with no active lanes");
        let exec = if active == 64 { u64::MAX } else { (1u64 << active) - 1 };
        let mut sgpr = [0u32; SGPR_COUNT];
        for (i, v) in spec.kernarg.iter().enumerate() {
            sgpr[i] = *v;
        }
        sgpr[SGPR_WG_ID] = wg_id;
        sgpr[SGPR_WG_SIZE] = spec.wg_size;
        sgpr[SGPR_WF_INDEX] = wf_index;
        sgpr[SGPR_GRID_SIZE] = spec.grid_size as u32;
        let vgpr_count = spec.kernel.vgpr_count as usize;
        let mut vgpr = vec![0u32; vgpr_count * LANES];
        // v0 = local flat work-item id.
        for lane in 0..LANES {
            vgpr[lane] = first_lane + lane as u32;
        }
        Wavefront {
            pc: spec.code_base,
            code_base: spec.code_base,
            code_len: spec.kernel.code_bytes(),
            sgpr,
            vgpr,
            exec,
            vcc: 0,
            scc: false,
            wg_id,
            wf_index,
        }
    }

    pub fn instr_index(&self) -> usize {
        debug_assert!(self.pc >= self.code_base && self.pc < self.code_base + self.code_len);
        ((self.pc - self.code_base) / INSTR_BYTES) as usize
    }

    pub fn vgpr(&self, reg: u8, lane: usize) -> u32 {
        self.vgpr[usize::from(reg) * LANES + lane]
    }

    fn vgpr_write(&mut self, reg: u8, lane: usize, v: u32) {
        self.vgpr[usize::from(reg) * LANES + lane] = v;
    }

    pub fn lane_active(&self, lane: usize) -> bool {
        self.exec & (1u64 << lane) != 0
    }
}

/// Control outcome of executing one instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecOutcome {
    /// pc already advanced (fall-through or taken branch).
    Continue,
    Barrier,
    End,
}

/// One lane's memory access as produced by a FLAT instruction.
#[derive(Debug, Clone, Copy)]
pub struct LaneAccess {
    pub lane: u8,
    pub addr: u64,
    pub kind: AccessKind,
}

#[derive(Debug, Clone, Copy)]
pub enum AccessKind {
    LoadDword,
    LoadUbyte,
    StoreDword(u32),
    StoreByte(u8),
}

impl AccessKind {
    pub fn is_store(&self) -> bool {
        matches!(self, AccessKind::StoreDword(_) | AccessKind::StoreByte(_))
    }

    pub fn bytes(&self) -> u64 {
        match self {
            AccessKind::LoadDword | AccessKind::StoreDword(_) => 4,
            AccessKind::LoadUbyte | AccessKind::StoreByte(_) => 1,
        }
    }
}

fn scalar_operand(wf: &Wavefront, op: Operand) -> u32 {
    match op {
        Operand::SReg(s) => wf.sgpr[usize::from(s)],
        Operand::Lit(v) => v,
        other => panic!("vector operand {other:?} in scalar instruction"),
    }
}

fn lane_operand(wf: &Wavefront, op: Operand, lane: usize) -> u32 {
    match op {
        Operand::SReg(s) => wf.sgpr[usize::from(s)],
        Operand::Lit(v) => v,
        Operand::VReg(v) => wf.vgpr(v, lane),
        other => panic!("operand {other:?} not readable per lane"),
    }
}

fn sdst(op: Operand) -> usize {
    match op {
        Operand::SReg(s) => usize::from(s),
        other => panic!("scalar destination expected, got {other:?}"),
    }
}

fn vdst(op: Operand) -> u8 {
    match op {
        Operand::VReg(v) => v,
        other => panic!("vector destination expected, got {other:?}"),
    }
}

fn f(v: u32) -> f32 {
    f32::from_bits(v)
}

/// Execute a scalar, vector-ALU, or branch instruction. Architectural
/// state is updated per opcode semantics; lanes with a clear EXEC bit
/// produce no register writes. `pc` advances by 4 unless a branch is
/// taken.
pub fn exec_alu(wf: &mut Wavefront, inst: &Instruction) -> ExecOutcome {
    use Opcode::*;
    let ops = &inst.ops;
    let mut next_pc = wf.pc + INSTR_BYTES;
    match inst.op {
        SMov => {
            let v = scalar_operand(wf, ops[1]);
            wf.sgpr[sdst(ops[0])] = v;
        }
        SAddU32 => {
            let v = scalar_operand(wf, ops[1]).wrapping_add(scalar_operand(wf, ops[2]));
            wf.sgpr[sdst(ops[0])] = v;
        }
        SMulU32 => {
            let v = scalar_operand(wf, ops[1]).wrapping_mul(scalar_operand(wf, ops[2]));
            wf.sgpr[sdst(ops[0])] = v;
        }
        SAndU32 => {
            let v = scalar_operand(wf, ops[1]) & scalar_operand(wf, ops[2]);
            wf.sgpr[sdst(ops[0])] = v;
        }
        SCmpLtU32 => {
            wf.scc = scalar_operand(wf, ops[0]) < scalar_operand(wf, ops[1]);
        }
        SCbranchScc1 => {
            if wf.scc {
                next_pc = wf.code_base + target(ops[0]) * INSTR_BYTES;
            }
        }
        SBranch => {
            next_pc = wf.code_base + target(ops[0]) * INSTR_BYTES;
        }
        SBarrier => {
            wf.pc = next_pc;
            return ExecOutcome::Barrier;
        }
        SEndpgm => {
            return ExecOutcome::End;
        }
        VMovB32 => vector_unop(wf, ops, |_, s| s),
        VAddU32 => vector_binop(wf, ops, |a, b| a.wrapping_add(b)),
        VSubU32 => vector_binop(wf, ops, |a, b| a.wrapping_sub(b)),
        VMulLoU32 => vector_binop(wf, ops, |a, b| a.wrapping_mul(b)),
        VAddF32 => vector_binop(wf, ops, |a, b| (f(a) + f(b)).to_bits()),
        VSubF32 => vector_binop(wf, ops, |a, b| (f(a) - f(b)).to_bits()),
        VMulF32 => vector_binop(wf, ops, |a, b| (f(a) * f(b)).to_bits()),
        VMacF32 => {
            let d = vdst(ops[0]);
            for lane in 0..LANES {
                if wf.lane_active(lane) {
                    let a = f(lane_operand(wf, ops[1], lane));
                    let b = f(lane_operand(wf, ops[2], lane));
                    let acc = f(wf.vgpr(d, lane));
                    wf.vgpr_write(d, lane, (a * b + acc).to_bits());
                }
            }
        }
        VXorB32 => vector_binop(wf, ops, |a, b| a ^ b),
        VAndB32 => vector_binop(wf, ops, |a, b| a & b),
        VOrB32 => vector_binop(wf, ops, |a, b| a | b),
        VLshlrevB32 => vector_binop(wf, ops, |shift, v| v << (shift & 31)),
        VLshrrevB32 => vector_binop(wf, ops, |shift, v| v >> (shift & 31)),
        VCmpLtU32 => vector_cmp(wf, ops, |a, b| a < b),
        VCmpLtF32 => vector_cmp(wf, ops, |a, b| f(a) < f(b)),
        VCndmaskB32 => {
            let d = vdst(ops[0]);
            for lane in 0..LANES {
                if wf.lane_active(lane) {
                    let sel = wf.vcc & (1u64 << lane) != 0;
                    let v = if sel {
                        lane_operand(wf, ops[2], lane)
                    } else {
                        lane_operand(wf, ops[1], lane)
                    };
                    wf.vgpr_write(d, lane, v);
                }
            }
        }
        VMbcnt => {
            let d = vdst(ops[0]);
            for lane in 0..LANES {
                if wf.lane_active(lane) {
                    wf.vgpr_write(d, lane, lane as u32);
                }
            }
        }
        FlatLoadDword | FlatStoreDword | FlatLoadUbyte | FlatStoreByte | DsReadB32
        | DsWriteB32 => {
            panic!("memory instruction routed to exec_alu")
        }
    }
    wf.pc = next_pc;
    ExecOutcome::Continue
}

fn target(op: Operand) -> u64 {
    match op {
        Operand::Target(t) => u64::from(t),
        other => panic!("branch target expected, got {other:?}"),
    }
}

fn vector_unop(wf: &mut Wavefront, ops: &[Operand], op: impl Fn(usize, u32) -> u32) {
    let d = vdst(ops[0]);
    for lane in 0..LANES {
        if wf.lane_active(lane) {
            let s = lane_operand(wf, ops[1], lane);
            wf.vgpr_write(d, lane, op(lane, s));
        }
    }
}

fn vector_binop(wf: &mut Wavefront, ops: &[Operand], op: impl Fn(u32, u32) -> u32) {
    let d = vdst(ops[0]);
    for lane in 0..LANES {
        if wf.lane_active(lane) {
            let a = lane_operand(wf, ops[1], lane);
            let b = lane_operand(wf, ops[2], lane);
            wf.vgpr_write(d, lane, op(a, b));
        }
    }
}

fn vector_cmp(wf: &mut Wavefront, ops: &[Operand], op: impl Fn(u32, u32) -> bool) {
    for lane in 0..LANES {
        if wf.lane_active(lane) {
            let a = lane_operand(wf, ops[0], lane);
            let b = lane_operand(wf, ops[1], lane);
            if op(a, b) {
                wf.vcc |= 1u64 << lane;
            } else {
                wf.vcc &= !(1u64 << lane);
            }
        }
    }
}

/// Per-active-lane memory accesses of a FLAT instruction. The address is
/// a 64-bit scalar base pair plus a 32-bit per-lane byte offset.
pub fn flat_accesses(wf: &Wavefront, inst: &Instruction) -> Vec<LaneAccess> {
    use Opcode::*;
    let (value_op, base_op, off_op) = (inst.ops[0], inst.ops[1], inst.ops[2]);
    let base = match base_op {
        Operand::SPair(s) => {
            u64::from(wf.sgpr[usize::from(s)]) | (u64::from(wf.sgpr[usize::from(s) + 1]) << 32)
        }
        other => panic!("flat base must be a scalar pair, got {other:?}"),
    };
    let mut out = Vec::new();
    for lane in 0..LANES {
        if !wf.lane_active(lane) {
            continue;
        }
        let addr = base + u64::from(lane_operand(wf, off_op, lane));
        let kind = match inst.op {
            FlatLoadDword => {
                assert!(addr % 4 == 0, "unaligned dword load at {addr:#x}");
                AccessKind::LoadDword
            }
            FlatLoadUbyte => AccessKind::LoadUbyte,
            FlatStoreDword => {
                assert!(addr % 4 == 0, "unaligned dword store at {addr:#x}");
                AccessKind::StoreDword(lane_operand(wf, value_op, lane))
            }
            FlatStoreByte => AccessKind::StoreByte(lane_operand(wf, value_op, lane) as u8),
            _ => panic!("not a flat instruction"),
        };
        out.push(LaneAccess { lane: lane as u8, addr, kind });
    }
    out
}

/// Commit loaded bytes into the destination register of one lane.
/// UBYTE loads zero-extend.
pub fn flat_commit_load(wf: &mut Wavefront, inst: &Instruction, lane: u8, bytes: &[u8]) {
    let d = vdst(inst.ops[0]);
    let v = match inst.op {
        Opcode::FlatLoadDword => u32::from_le_bytes(bytes.try_into().expect("dword load")),
        Opcode::FlatLoadUbyte => u32::from(bytes[0]),
        _ => panic!("not a flat load"),
    };
    wf.vgpr_write(d, usize::from(lane), v);
}

/// Advance past a memory instruction once its effects committed.
pub fn advance_pc(wf: &mut Wavefront) {
    wf.pc += INSTR_BYTES;
}

/// Execute an LDS instruction against the owning work-group's LDS slice.
/// Addresses are byte offsets into that slice.
pub fn exec_ds(wf: &mut Wavefront, inst: &Instruction, lds: &mut [u8]) {
    let lds_len = lds.len();
    let addr_of = move |wf: &Wavefront, lane: usize, op: Operand| -> usize {
        let a = lane_operand(wf, op, lane) as usize;
        assert!(a % 4 == 0 && a + 4 <= lds_len, "LDS access out of range: {a}");
        a
    };
    match inst.op {
        Opcode::DsReadB32 => {
            let d = vdst(inst.ops[0]);
            for lane in 0..LANES {
                if wf.lane_active(lane) {
                    let a = addr_of(wf, lane, inst.ops[1]);
                    let v = u32::from_le_bytes(lds[a..a + 4].try_into().unwrap());
                    wf.vgpr_write(d, lane, v);
                }
            }
        }
        Opcode::DsWriteB32 => {
            for lane in 0..LANES {
                if wf.lane_active(lane) {
                    let a = addr_of(wf, lane, inst.ops[0]);
                    let v = lane_operand(wf, inst.ops[1], lane);
                    lds[a..a + 4].copy_from_slice(&v.to_le_bytes());
                }
            }
        }
        _ => panic!("not an LDS instruction"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_spec(instrs: Vec<Instruction>) -> LaunchSpec {
        LaunchSpec {
            kernel: Arc::new(Kernel {
                name: "t".into(),
                instrs,
                vgpr_count: 8,
                lds_bytes: 0,
            }),
            code_base: 0x1000,
            grid_size: 64,
            wg_size: 64,
            kernarg: vec![],
        }
    }

    fn wf(instrs: Vec<Instruction>) -> Wavefront {
        Wavefront::for_dispatch(&test_spec(instrs), 0, 0)
    }

    fn i(op: Opcode, ops: Vec<Operand>) -> Instruction {
        Instruction { op, ops }
    }

    #[test]
    fn v_add_f32_adds_all_lanes() {
        let inst = i(
            Opcode::VAddF32,
            vec![Operand::VReg(2), Operand::VReg(1), Operand::VReg(3)],
        );
        let mut w = wf(vec![inst.clone()]);
        for lane in 0..LANES {
            w.vgpr_write(1, lane, 2.5f32.to_bits());
            w.vgpr_write(3, lane, 1.5f32.to_bits());
        }
        assert_eq!(exec_alu(&mut w, &inst), ExecOutcome::Continue);
        for lane in 0..LANES {
            assert_eq!(f32::from_bits(w.vgpr(2, lane)), 4.0);
        }
        assert_eq!(w.pc, 0x1004);
    }

    #[test]
    fn exec_mask_suppresses_inactive_lane_writes() {
        let inst = i(
            Opcode::VXorB32,
            vec![Operand::VReg(1), Operand::VReg(1), Operand::Lit(0xFFFF_FFFF)],
        );
        let mut w = wf(vec![inst.clone()]);
        w.exec = 0x1;
        exec_alu(&mut w, &inst);
        assert_eq!(w.vgpr(1, 0), 0xFFFF_FFFF);
        for lane in 1..LANES {
            assert_eq!(w.vgpr(1, lane), 0, "lane {lane} must be untouched");
        }
    }

    #[test]
    fn ubyte_load_zero_extends() {
        let inst = i(
            Opcode::FlatLoadUbyte,
            vec![Operand::VReg(1), Operand::SPair(4), Operand::VReg(0)],
        );
        let mut w = wf(vec![inst.clone()]);
        w.exec = 1;
        flat_commit_load(&mut w, &inst, 0, &[0x3C]);
        assert_eq!(w.vgpr(1, 0), 0x0000_003C);
    }

    #[test]
    fn flat_addresses_combine_base_pair_and_lane_offset() {
        let inst = i(
            Opcode::FlatLoadDword,
            vec![Operand::VReg(1), Operand::SPair(4), Operand::VReg(0)],
        );
        let mut w = wf(vec![inst.clone()]);
        w.sgpr[4] = 0x0000_0100;
        w.sgpr[5] = 0x1; // base = 0x1_0000_0100
        for lane in 0..LANES {
            w.vgpr[lane] = (lane * 4) as u32;
        }
        let acc = flat_accesses(&w, &inst);
        assert_eq!(acc.len(), 64);
        assert_eq!(acc[0].addr, 0x1_0000_0100);
        assert_eq!(acc[63].addr, 0x1_0000_0100 + 63 * 4);
    }

    #[test]
    fn scalar_branch_taken_on_scc() {
        let br = i(Opcode::SCbranchScc1, vec![Operand::Target(7)]);
        let mut w = wf(vec![br.clone()]);
        w.scc = false;
        exec_alu(&mut w, &br);
        assert_eq!(w.pc, 0x1004);
        w.pc = 0x1000;
        w.scc = true;
        exec_alu(&mut w, &br);
        assert_eq!(w.pc, 0x1000 + 7 * 4);
    }

    #[test]
    fn literal_and_sgpr_operand_resolution() {
        let mov = i(Opcode::SMov, vec![Operand::SReg(7), Operand::Lit(7)]);
        let mut w = wf(vec![mov.clone()]);
        exec_alu(&mut w, &mov);
        assert_eq!(w.sgpr[7], 7);
        w.sgpr[3] = 42;
        let mov2 = i(Opcode::SMov, vec![Operand::SReg(8), Operand::SReg(3)]);
        exec_alu(&mut w, &mov2);
        assert_eq!(w.sgpr[8], 42);
    }

    #[test]
    #[should_panic(expected = "vector operand")]
    fn vector_operand_in_scalar_instruction_is_fatal() {
        let bad = i(Opcode::SAddU32, vec![Operand::SReg(0), Operand::VReg(1), Operand::Lit(1)]);
        let mut w = wf(vec![bad.clone()]);
        exec_alu(&mut w, &bad);
    }

    #[test]
    fn partial_tail_wavefront_masks_lanes() {
        let mut spec = test_spec(vec![i(Opcode::SEndpgm, vec![])]);
        spec.grid_size = 100;
        spec.wg_size = 100;
        let w0 = Wavefront::for_dispatch(&spec, 0, 0);
        let w1 = Wavefront::for_dispatch(&spec, 0, 1);
        assert_eq!(w0.exec, u64::MAX);
        assert_eq!(w1.exec, (1u64 << 36) - 1);
        assert_eq!(w1.vgpr(0, 0), 64);
    }
}
