//! `gd` — the gather pattern: one gradient-descent step for a linear
//! least-squares model evaluated at w = 0, where the gradient is
//! `g[j] = Σ_r resid[r] · X[r][j]` with the residuals (`-y`) fixed by
//! the host. Two kernels:
//!
//! 1. each GPU reduces its local 8-row mini-batch into a full-length
//!    partial gradient, entirely locally;
//! 2. each GPU averages its slice of the parameter vector across all
//!    partial gradients — on a partitioned topology this reads the
//!    other GPUs' partial buffers, the gather that forces cross-GPU
//!    traffic proportional to the shared (partial-gradient) buffers.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;

use crate::isa::asm::assemble;
use crate::platform::Cmd;

use super::{f32_bytes, lohi, Check, Params, Plan, PlanEnv, StagedKernel};

/// Host reference for one partition's partial gradient, matching the
/// kernel order: rows ascending, `acc = x * resid + acc`.
pub fn partial_gradient(x: &[f32], resid: &[f32], nparams: usize) -> Vec<f32> {
    (0..nparams)
        .map(|j| {
            let mut acc = 0.0f32;
            for (r, c) in resid.iter().enumerate() {
                acc = x[r * nparams + j] * c + acc;
            }
            acc
        })
        .collect()
}

/// kernarg: s[0:1] X (batch x nparams, row-major), s[2:3] residuals,
/// s[4:5] partial out. Baked: batch rows and the row stride.
fn partial_src(nparams: u64, batch: u64) -> String {
    let mut src = String::from(
        ".vgprs 8\n\
         \x20 s_mul_u32 s20, s16, s17\n\
         \x20 v_add_u32 v1, v0, s20\n\
         \x20 v_lshlrev_b32 v2, 2, v1\n\
         \x20 v_mov_b32 v3, 0\n",
    );
    for r in 0..batch {
        let _ = writeln!(src, "  flat_load_dword v6, s[2:3], {}", 4 * r);
        let _ = writeln!(src, "  v_add_u32 v5, v2, {}", 4 * r * nparams);
        src.push_str("  flat_load_dword v4, s[0:1], v5\n  v_mac_f32 v3, v4, v6\n");
    }
    src.push_str("  flat_store_dword v3, s[4:5], v2\n  s_endpgm\n");
    src
}

/// Gather + average over one parameter slice. Sums the partials in
/// partition order, then scales by 1/parts.
/// kernarg: `parts` partial base pairs, then the out pair, then the
/// slice byte offset.
fn average_src(parts: usize) -> String {
    let mut src = String::from(
        ".vgprs 8\n\
         \x20 s_mul_u32 s20, s16, s17\n\
         \x20 v_add_u32 v1, v0, s20\n\
         \x20 v_lshlrev_b32 v2, 2, v1\n",
    );
    let off_sreg = 2 * parts + 2;
    let _ = writeln!(src, "  v_add_u32 v3, v2, s{off_sreg}");
    src.push_str("  flat_load_dword v4, s[0:1], v3\n");
    for p in 1..parts {
        let _ = writeln!(src, "  flat_load_dword v5, s[{}:{}], v3", 2 * p, 2 * p + 1);
        src.push_str("  v_add_f32 v4, v4, v5\n");
    }
    let scale = 1.0f32 / parts as f32;
    let _ = writeln!(src, "  v_mul_f32 v4, v4, {scale:?}");
    let _ = writeln!(src, "  flat_store_dword v4, s[{}:{}], v2", 2 * parts, 2 * parts + 1);
    src.push_str("  s_endpgm\n");
    src
}

pub fn build(env: &PlanEnv, params: &Params) -> Result<Plan, String> {
    let nparams = params.get("params", 8192);
    let batch = params.get("batch", 8);
    let parts = env.parts() as u64;
    if nparams % (64 * parts) != 0 {
        return Err(format!("gd: params must be a multiple of {}", 64 * parts));
    }
    if batch == 0 || batch > 16 {
        return Err("gd: batch must be in 1..=16 rows per partition".into());
    }
    let slice = nparams / parts;

    let mut rng = super::rng(0x6D);
    let mut alloc = env.allocator();
    let mut cmds = Vec::new();
    let partial_k = Arc::new(assemble("gd_partial", &partial_src(nparams, batch)).map_err(|e| e.to_string())?);
    let partial_k = StagedKernel::stage(env, &mut alloc, &mut cmds, partial_k);
    let average_k = Arc::new(assemble("gd_average", &average_src(parts as usize)).map_err(|e| e.to_string())?);
    let average_k = StagedKernel::stage(env, &mut alloc, &mut cmds, average_k);

    let mut partials = Vec::new();
    let mut partial_vals = Vec::new();
    let mut firsts = Vec::new();
    let mut checks = Vec::new();
    for p in 0..parts as usize {
        let x: Vec<f32> = (0..batch * nparams).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let resid: Vec<f32> = (0..batch).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let x_b = alloc.alloc(batch * nparams * 4, env.hint(p));
        let resid_b = alloc.alloc(batch * 4, env.hint(p));
        let partial_b = alloc.alloc(nparams * 4, env.hint(p));
        cmds.push(Cmd::MemWrite { addr: x_b, data: f32_bytes(&x) });
        cmds.push(Cmd::MemWrite { addr: resid_b, data: f32_bytes(&resid) });
        let pv = partial_gradient(&x, &resid, nparams as usize);
        checks.push(Check {
            label: format!("gd partial[{p}]"),
            addr: partial_b,
            expect: f32_bytes(&pv),
        });
        partial_vals.push(pv);
        partials.push(partial_b);
        firsts.push((x_b, resid_b));
    }

    let mut batch1 = Vec::new();
    for (p, &(x_b, resid_b)) in firsts.iter().enumerate() {
        let kernarg = [lohi(x_b), lohi(resid_b), lohi(partials[p])].concat();
        batch1.push((env.cp_of(p), partial_k.spec(p, nparams, 64, kernarg)));
    }
    let mut batch2 = Vec::new();
    for p in 0..parts as usize {
        let out = alloc.alloc(slice * 4, env.hint(p));
        let mut kernarg: Vec<u32> = partials.iter().flat_map(|&b| lohi(b)).collect();
        kernarg.extend(lohi(out));
        kernarg.push((p as u64 * slice * 4) as u32);
        batch2.push((env.cp_of(p), average_k.spec(p, slice, 64, kernarg)));
        // Expected averaged slice, in the kernel's order.
        let scale = 1.0f32 / parts as f32;
        let lo = p * slice as usize;
        let avg: Vec<f32> = (lo..lo + slice as usize)
            .map(|j| {
                let mut acc = partial_vals[0][j];
                for pv in &partial_vals[1..] {
                    acc += pv[j];
                }
                acc * scale
            })
            .collect();
        checks.push(Check { label: format!("gd avg[{p}]"), addr: out, expect: f32_bytes(&avg) });
    }
    let launches = (batch1.len() + batch2.len()) as u64;
    cmds.push(Cmd::Launch(batch1));
    cmds.push(Cmd::Launch(batch2));
    Ok(Plan { name: "gd".into(), cmds, checks, launches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platform::PlatformConfig;
    use crate::workloads::{emulate_plan, verify, PlanEnv};

    #[test]
    fn zero_data_gives_zero_gradient() {
        let g = partial_gradient(&[0.0; 64], &[0.0; 2], 32);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn emulated_plan_matches_oracle_on_sgpu() {
        let env = PlanEnv::of(&PlatformConfig::preset("r9nano").unwrap());
        let mut p = Params::default();
        p.0.insert("params".into(), 1024);
        let plan = build(&env, &p).unwrap();
        assert_eq!(plan.launches, 2);
        let (mem, _) = emulate_plan(plan.cmds).unwrap();
        assert_eq!(verify(&plan.checks, &mem), Vec::<String>::new());
    }

    #[test]
    fn emulated_plan_matches_oracle_on_dmgpu() {
        let env = PlanEnv::of(&PlatformConfig::preset("dmgpu").unwrap());
        let mut p = Params::default();
        p.0.insert("params".into(), 2048);
        let plan = build(&env, &p).unwrap();
        assert_eq!(plan.launches, 8);
        let (mem, _) = emulate_plan(plan.cmds).unwrap();
        assert_eq!(verify(&plan.checks, &mem), Vec::<String>::new());
    }
}
