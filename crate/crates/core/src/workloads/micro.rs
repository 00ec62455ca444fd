//! Latency micro-benchmarks. Each one runs a single wavefront so that
//! per-access latencies are visible in the total cycle count:
//!
//! * `alu` — N straight-line `v_add_f32` instructions; execution time
//!   forms a staircase: 5 cycles per instruction within an instruction
//!   cache line, plus one fetch stall per 64-byte line.
//! * `l1-access` — N loads of the same address.
//! * `l2-access` — scan 1 MB (filling L2), then re-read N addresses
//!   from the start; the timed loop hits in L2.
//! * `dram-access` — N loads with a 64-byte stride over a cold region;
//!   every access misses all caches.
//!
//! The timed loops are unrolled 4x and always fit inside one 64-byte
//! instruction line, so loop-resident code adds no fetch traffic and
//! little control overhead to the measured slope.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::isa::asm::assemble;
use crate::platform::Cmd;

use super::{lohi, Params, Plan, PlanEnv, StagedKernel};

const MB: u64 = 1 << 20;

/// Pad with harmless vector moves until the next instruction index is a
/// multiple of 16 (a 64-byte line boundary).
fn pad_to_line(src: &mut String, emitted: usize) -> usize {
    let mut n = emitted;
    while n % 16 != 0 {
        src.push_str("  v_mov_b32 v3, 0\n");
        n += 1;
    }
    n
}

fn alu_kernel(n: u64) -> String {
    let mut src = String::from(".vgprs 4\n");
    for _ in 0..n {
        src.push_str("  v_add_f32 v1, v1, v2\n");
    }
    src.push_str("  s_endpgm\n");
    src
}

/// One timed, unrolled read loop: 4 loads per iteration, `stride` bytes
/// apart, `counter` counts items against the limit in `limit_sreg`.
fn read_loop(src: &mut String, label: &str, stride: u64, limit_sreg: u32, emitted: usize) -> usize {
    let mut n = pad_to_line(src, emitted);
    let _ = writeln!(src, "{label}:");
    for _ in 0..4 {
        src.push_str("  flat_load_dword v2, s[0:1], v1\n");
        let _ = writeln!(src, "  v_add_u32 v1, v1, {stride}");
        n += 2;
    }
    src.push_str("  s_add_u32 s20, s20, 4\n");
    let _ = writeln!(src, "  s_cmp_lt_u32 s20, s{limit_sreg}");
    let _ = writeln!(src, "  s_cbranch_scc1 {label}");
    n + 3
}

pub fn build(kind: &str, env: &PlanEnv, params: &Params) -> Result<Plan, String> {
    let mut alloc = env.allocator();
    let mut cmds: Vec<Cmd> = Vec::new();
    let (src, kernarg, buf_label) = match kind {
        "alu" => {
            let n = params.get("n", 64);
            (alu_kernel(n), Vec::new(), None)
        }
        "l1-access" => {
            let n = params.get("n", 1024).next_multiple_of(4);
            let buf = alloc.alloc(64, None);
            let mut src = String::from(".vgprs 4\n  s_mov s20, 0\n  v_mov_b32 v1, 0\n");
            let n_emitted = read_loop(&mut src, "timed", 0, 2, 2);
            let _ = n_emitted;
            src.push_str("  s_endpgm\n");
            (src, [lohi(buf).to_vec(), vec![n as u32]].concat(), Some(buf))
        }
        "l2-access" => {
            // Scan 1 MB (it fits in the 2 MB L2), then re-read n lines
            // from the start. Differencing two n values isolates the
            // L2 hit latency; the scan phase is constant.
            let n = params.get("n", 1024).next_multiple_of(4);
            let scan_lines = MB / 64;
            if n > scan_lines {
                return Err(format!("l2-access n must be <= {scan_lines}"));
            }
            let buf = alloc.alloc(MB, None);
            let mut src = String::from(".vgprs 4\n  s_mov s20, 0\n  v_mov_b32 v1, 0\n");
            let mut emitted = read_loop(&mut src, "scan", 64, 2, 2);
            src.push_str("  s_mov s20, 0\n  v_mov_b32 v1, 0\n");
            emitted += 2;
            let _ = read_loop(&mut src, "timed", 64, 3, emitted);
            src.push_str("  s_endpgm\n");
            (
                src,
                [lohi(buf).to_vec(), vec![scan_lines as u32, n as u32]].concat(),
                Some(buf),
            )
        }
        "dram-access" => {
            let n = params.get("n", 512).next_multiple_of(4);
            let buf_bytes = (n * 64).max(MB);
            let buf = alloc.alloc(buf_bytes, None);
            let mut src = String::from(".vgprs 4\n  s_mov s20, 0\n  v_mov_b32 v1, 0\n");
            let _ = read_loop(&mut src, "timed", 64, 2, 2);
            src.push_str("  s_endpgm\n");
            (src, [lohi(buf).to_vec(), vec![n as u32]].concat(), Some(buf))
        }
        other => return Err(format!("unknown micro-benchmark `{other}`")),
    };
    let _ = buf_label;
    let kernel = Arc::new(assemble(kind, &src).map_err(|e| e.to_string())?);
    let staged = StagedKernel::stage(env, &mut alloc, &mut cmds, kernel);
    let spec = staged.spec(0, 64, 64, kernarg);
    cmds.push(Cmd::Launch(vec![(env.cp_of(0), spec)]));
    Ok(Plan {
        name: kind.to_string(),
        cmds,
        checks: Vec::new(),
        launches: 1,
    })
}
