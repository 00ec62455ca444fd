//! `bs` — the irregular pattern: a bitonic sort of 32-bit unsigned
//! integers. The network runs as one kernel launch per (stage, pass):
//! work-item `i` pairs with `i XOR j` and writes the value its own slot
//! must hold, reading from the previous pass's buffer and writing the
//! next (ping-pong), so a pass has no read/write hazards no matter how
//! work-groups interleave.
//!
//! Both buffers live on GPU 0; on a partitioned topology the items are
//! split across the GPUs but every GPU chases partners through the one
//! shared array — the irregular, affinity-less access the pattern is
//! about.

use std::sync::Arc;

use rand::Rng;

use crate::isa::asm::assemble;
use crate::platform::Cmd;

use super::{lohi, u32_bytes, Check, Params, Plan, PlanEnv, StagedKernel};

/// kernarg: s[0:1] src, s[2:3] dst, s4 = j, s5 = k, s6 = first item.
const KERNEL: &str = "
.vgprs 13
  s_mul_u32 s20, s16, s17
  s_add_u32 s20, s20, s6
  v_add_u32 v1, v0, s20         ; i
  v_xor_b32 v2, v1, s4          ; partner l
  v_lshlrev_b32 v3, 2, v1
  v_lshlrev_b32 v4, 2, v2
  flat_load_dword v5, s[0:1], v3
  flat_load_dword v6, s[0:1], v4
  v_and_b32 v7, v1, s5
  v_cmp_lt_u32 v5, v6           ; vcc = a < b
  v_cndmask_b32 v8, v6, v5      ; min
  v_cndmask_b32 v9, v5, v6      ; max
  v_cmp_lt_u32 v1, v2           ; vcc = i is the lower slot
  v_cndmask_b32 v10, v9, v8     ; ascending: lower takes min
  v_cndmask_b32 v11, v8, v9     ; descending: lower takes max
  v_cmp_lt_u32 v7, 1            ; vcc = (i & k) == 0, ascending block
  v_cndmask_b32 v12, v11, v10
  flat_store_dword v12, s[2:3], v3
  s_endpgm
";

pub fn build(env: &PlanEnv, params: &Params) -> Result<Plan, String> {
    let n = params.get("n", 4096);
    let parts = env.parts() as u64;
    if !n.is_power_of_two() || n / parts < 64 {
        return Err("bs: n must be a power of two with at least one wavefront per partition".into());
    }

    let mut rng = super::rng(0xB5);
    let input: Vec<u32> = (0..n).map(|_| rng.gen()).collect();
    let mut expect = input.clone();
    expect.sort_unstable();

    let mut alloc = env.allocator();
    let mut cmds = Vec::new();
    let kernel = Arc::new(assemble("bs", KERNEL).map_err(|e| e.to_string())?);
    let staged = StagedKernel::stage(env, &mut alloc, &mut cmds, kernel);

    // Both ping-pong buffers on GPU 0: the array is one shared object.
    let a = alloc.alloc(n * 4, env.hint(0));
    let b = alloc.alloc(n * 4, env.hint(0));
    cmds.push(Cmd::MemWrite { addr: a, data: u32_bytes(&input) });

    let per_part = n / parts;
    let mut bufs = [a, b];
    let mut launches = 0;
    let mut k = 2;
    while k <= n {
        let mut j = k / 2;
        while j >= 1 {
            let [src, dst] = bufs;
            let batch: Vec<_> = (0..parts as usize)
                .map(|p| {
                    let kernarg = [
                        lohi(src).as_slice(),
                        &lohi(dst),
                        &[j as u32, k as u32, (p as u64 * per_part) as u32],
                    ]
                    .concat();
                    (env.cp_of(p), staged.spec(p, per_part, 64, kernarg))
                })
                .collect();
            launches += batch.len() as u64;
            cmds.push(Cmd::Launch(batch));
            bufs = [dst, src];
            j /= 2;
        }
        k *= 2;
    }

    let checks = vec![Check {
        label: "bs sorted".into(),
        addr: bufs[0],
        expect: u32_bytes(&expect),
    }];
    Ok(Plan { name: "bs".into(), cmds, checks, launches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platform::PlatformConfig;
    use crate::workloads::{emulate_plan, verify, PlanEnv};

    fn params(n: u64) -> Params {
        let mut p = Params::default();
        p.0.insert("n".into(), n);
        p
    }

    #[test]
    fn launch_count_matches_network_size() {
        let env = PlanEnv::of(&PlatformConfig::preset("r9nano").unwrap());
        // log2(1024) = 10 stages -> 10 * 11 / 2 = 55 passes.
        let plan = build(&env, &params(1024)).unwrap();
        assert_eq!(plan.launches, 55);
    }

    #[test]
    fn emulated_plan_sorts_on_sgpu() {
        let env = PlanEnv::of(&PlatformConfig::preset("r9nano").unwrap());
        let plan = build(&env, &params(1024)).unwrap();
        let (mem, _) = emulate_plan(plan.cmds).unwrap();
        assert_eq!(verify(&plan.checks, &mem), Vec::<String>::new());
    }

    #[test]
    fn emulated_plan_sorts_on_dmgpu() {
        let env = PlanEnv::of(&PlatformConfig::preset("dmgpu").unwrap());
        let plan = build(&env, &params(1024)).unwrap();
        assert_eq!(plan.launches, 220);
        let (mem, _) = emulate_plan(plan.cmds).unwrap();
        assert_eq!(verify(&plan.checks, &mem), Vec::<String>::new());
    }

}
