//! `mt` — the scatter pattern: a tiled transpose of a W×W matrix.
//! Each 256-item work-group stages one 32×32 tile through LDS (each
//! item moves four elements), barriers, and writes the tile back to the
//! transposed location.
//!
//! Row bands of the input live on their own GPU; the transposed output
//! is also banded by rows, so a GPU reads only local data but writes
//! into every output band ("read local, write remote"). The work is
//! issued as one launch per (input band, output band) pair, rotated so
//! that in each batch every GPU runs one kernel and every output band
//! has exactly one writer.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;

use crate::isa::asm::assemble;
use crate::platform::Cmd;

use super::{f32_bytes, lohi, Check, Params, Plan, PlanEnv, StagedKernel};

pub const TILE: u64 = 32;

pub fn transpose(input: &[f32], w: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; w * w];
    for r in 0..w {
        for c in 0..w {
            out[c * w + r] = input[r * w + c];
        }
    }
    out
}

/// One launch covers `ntr × ntc` tiles laid out tile-column-major in
/// the work-group id. All index math runs on the vector units (the
/// scalar file has no shifter). Baked constants: W and the launch's
/// tile-column count, both powers of two.
/// kernarg: s[0:1] in band, s[2:3] out band, s4 = input column offset
/// (the output band's first global row), s5 = output column offset (the
/// input band's first global row).
fn kernel_src(w: u64, ntc: u64) -> String {
    let log2w = w.trailing_zeros();
    let log2ntc = ntc.trailing_zeros();
    let mut src = String::from(".vgprs 12\n.lds 4096\n  v_mov_b32 v5, s16\n");
    let _ = writeln!(src, "  v_and_b32 v6, v5, {}", ntc - 1);
    let _ = writeln!(src, "  v_lshrrev_b32 v7, {log2ntc}, v5");
    src.push_str(
        "  v_and_b32 v1, v0, 31\n\
         \x20 v_lshrrev_b32 v2, 5, v0\n\
         \x20 v_lshlrev_b32 v8, 5, v6\n\
         \x20 v_add_u32 v8, v8, v1\n\
         \x20 v_add_u32 v8, v8, s4\n\
         \x20 v_lshlrev_b32 v9, 5, v7\n",
    );
    // Load phase: lds[ly][lx] = in[tr*32 + ly][s4 + tc*32 + lx].
    for k in 0..4 {
        let _ = writeln!(src, "  v_add_u32 v3, v2, {}", 8 * k);
        src.push_str("  v_add_u32 v4, v9, v3\n");
        let _ = writeln!(src, "  v_lshlrev_b32 v4, {log2w}, v4");
        src.push_str(
            "  v_add_u32 v4, v4, v8\n\
             \x20 v_lshlrev_b32 v4, 2, v4\n\
             \x20 flat_load_dword v10, s[0:1], v4\n\
             \x20 v_lshlrev_b32 v11, 5, v3\n\
             \x20 v_add_u32 v11, v11, v1\n\
             \x20 v_lshlrev_b32 v11, 2, v11\n\
             \x20 ds_write_b32 v11, v10\n",
        );
    }
    src.push_str("  s_barrier\n");
    // Store phase: out[tc*32 + ly][s5 + tr*32 + lx] = lds[lx][ly].
    for k in 0..4 {
        let _ = writeln!(src, "  v_add_u32 v3, v2, {}", 8 * k);
        src.push_str(
            "  v_lshlrev_b32 v11, 5, v1\n\
             \x20 v_add_u32 v11, v11, v3\n\
             \x20 v_lshlrev_b32 v11, 2, v11\n\
             \x20 ds_read_b32 v10, v11\n\
             \x20 v_lshlrev_b32 v4, 5, v6\n\
             \x20 v_add_u32 v4, v4, v3\n",
        );
        let _ = writeln!(src, "  v_lshlrev_b32 v4, {log2w}, v4");
        src.push_str(
            "  v_add_u32 v4, v4, v9\n\
             \x20 v_add_u32 v4, v4, v1\n\
             \x20 v_add_u32 v4, v4, s5\n\
             \x20 v_lshlrev_b32 v4, 2, v4\n\
             \x20 flat_store_dword v10, s[2:3], v4\n",
        );
    }
    src.push_str("  s_endpgm\n");
    src
}

pub fn build(env: &PlanEnv, params: &Params) -> Result<Plan, String> {
    let w = params.get("width", 256);
    let parts = env.parts() as u64;
    if !w.is_power_of_two() || w < TILE * 2 {
        return Err(format!("mt: width must be a power of two >= {}", TILE * 2));
    }
    let rh = w / parts;
    if rh % TILE != 0 {
        return Err(format!("mt: width/{parts} must be a multiple of {TILE}"));
    }
    let ntc = rh / TILE;

    let mut rng = super::rng(0x47);
    let input: Vec<f32> = (0..w * w).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let expect = transpose(&input, w as usize);

    let mut alloc = env.allocator();
    let mut cmds = Vec::new();
    let kernel = Arc::new(assemble("mt", &kernel_src(w, ntc)).map_err(|e| e.to_string())?);
    let staged = StagedKernel::stage(env, &mut alloc, &mut cmds, kernel);

    let band_elems = (rh * w) as usize;
    let mut ins = Vec::new();
    let mut outs = Vec::new();
    let mut checks = Vec::new();
    for p in 0..parts as usize {
        let input_b = alloc.alloc(rh * w * 4, env.hint(p));
        let out = alloc.alloc(rh * w * 4, env.hint(p));
        cmds.push(Cmd::MemWrite {
            addr: input_b,
            data: f32_bytes(&input[p * band_elems..][..band_elems]),
        });
        checks.push(Check {
            label: format!("mt out[{p}]"),
            addr: out,
            expect: f32_bytes(&expect[p * band_elems..][..band_elems]),
        });
        ins.push(input_b);
        outs.push(out);
    }

    // grid per launch: (rh/32) input tile rows x ntc tile columns, one
    // 256-item group per tile.
    let grid = (rh / TILE) * ntc * 256;
    let mut launches = 0;
    for round in 0..parts as usize {
        let mut batch = Vec::new();
        for p in 0..parts as usize {
            let q = (p + round) % parts as usize;
            let kernarg = [
                lohi(ins[p]).as_slice(),
                &lohi(outs[q]),
                &[(q as u64 * rh) as u32, (p as u64 * rh) as u32],
            ]
            .concat();
            batch.push((env.cp_of(p), staged.spec(p, grid, 256, kernarg)));
        }
        launches += batch.len() as u64;
        cmds.push(Cmd::Launch(batch));
    }
    Ok(Plan { name: "mt".into(), cmds, checks, launches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platform::PlatformConfig;
    use crate::workloads::{emulate_plan, verify, PlanEnv};

    #[test]
    fn transpose_identity_and_involution() {
        let n = 64;
        let mut ident = vec![0.0f32; n * n];
        for i in 0..n {
            ident[i * n + i] = 1.0;
        }
        assert_eq!(transpose(&ident, n), ident);
        let m: Vec<f32> = (0..n * n).map(|i| i as f32).collect();
        assert_eq!(transpose(&transpose(&m, n), n), m);
    }

    #[test]
    fn emulated_plan_matches_oracle_on_sgpu() {
        let env = PlanEnv::of(&PlatformConfig::preset("r9nano").unwrap());
        let mut p = Params::default();
        p.0.insert("width".into(), 64);
        let plan = build(&env, &p).unwrap();
        assert_eq!(plan.launches, 1);
        let (mem, _) = emulate_plan(plan.cmds).unwrap();
        assert_eq!(verify(&plan.checks, &mem), Vec::<String>::new());
    }

    #[test]
    fn emulated_plan_matches_oracle_on_dmgpu() {
        let env = PlanEnv::of(&PlatformConfig::preset("dmgpu").unwrap());
        let plan = build(&env, &Params::default()).unwrap();
        assert_eq!(plan.launches, 16);
        let (mem, _) = emulate_plan(plan.cmds).unwrap();
        assert_eq!(verify(&plan.checks, &mem), Vec::<String>::new());
    }
}
