//! `km` — the partitioned-data pattern, iterated: k-means clustering of
//! 32-feature points. The points are split per GPU (feature-major, so
//! consecutive work-items read consecutive words); the centroid table
//! is replicated per partition. Five fixed iterations of:
//!
//! 1. a GPU kernel assigning every local point to its nearest centroid
//!    (squared Euclidean distance, strict `<`, lowest index wins), and
//! 2. an untimed host step recomputing the centroids from all
//!    assignments and broadcasting them back to every replica.
//!
//! Every buffer a kernel touches is local to its GPU, so a partitioned
//! topology moves zero bytes across the interconnect.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;

use crate::isa::asm::assemble;
use crate::memsys::SparseMemory;
use crate::platform::Cmd;

use super::{f32_bytes, lohi, u32_bytes, Check, Params, Plan, PlanEnv, StagedKernel};

pub const FEATURES: usize = 32;
pub const ITERATIONS: usize = 5;

/// Squared distance in the kernel's order: features ascending,
/// `acc = d * d + acc`.
fn dist2(x: &[Vec<f32>], i: usize, cent: &[f32], c: usize) -> f32 {
    let mut acc = 0.0f32;
    for f in 0..FEATURES {
        let d = x[f][i] - cent[c * FEATURES + f];
        acc = d * d + acc;
    }
    acc
}

/// Assign each point of one partition; `x[f][i]` is feature-major.
fn assign(x: &[Vec<f32>], npoints: usize, cent: &[f32], k: usize) -> Vec<u32> {
    (0..npoints)
        .map(|i| {
            let mut best = f32::MAX;
            let mut idx = 0u32;
            for c in 0..k {
                let d = dist2(x, i, cent, c);
                if d < best {
                    best = d;
                    idx = c as u32;
                }
            }
            idx
        })
        .collect()
}

/// Centroid update: sums run over partitions in order, points in order,
/// features inner; empty clusters keep their previous centroid.
fn update(parts: &[Vec<Vec<f32>>], assigns: &[Vec<u32>], cent: &mut Vec<f32>, k: usize) {
    let mut sums = vec![0.0f64; k * FEATURES];
    let mut counts = vec![0u64; k];
    for (x, a) in parts.iter().zip(assigns) {
        for (i, &c) in a.iter().enumerate() {
            counts[c as usize] += 1;
            for f in 0..FEATURES {
                sums[c as usize * FEATURES + f] += f64::from(x[f][i]);
            }
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for f in 0..FEATURES {
                cent[c * FEATURES + f] = (sums[c * FEATURES + f] / counts[c] as f64) as f32;
            }
        }
    }
}

/// kernarg: s[0:1] points (feature-major), s[2:3] centroids,
/// s[4:5] assignments out. Baked: point count, feature count, k.
fn kernel_src(npoints: u64, k: u64) -> String {
    let mut src = String::from(
        ".vgprs 12\n\
         \x20 s_mul_u32 s20, s16, s17\n\
         \x20 v_add_u32 v1, v0, s20\n\
         \x20 v_lshlrev_b32 v2, 2, v1\n\
         \x20 v_mov_b32 v9, 0x7f7fffff\n\
         \x20 v_mov_b32 v10, 0\n\
         \x20 s_mov s21, 0\n\
         cloop:\n",
    );
    let _ = writeln!(src, "  s_mul_u32 s25, s21, {}", FEATURES * 4);
    src.push_str("  s_mov s23, 0\n  v_mov_b32 v8, 0\nfloop:\n");
    let _ = writeln!(src, "  s_mul_u32 s24, s23, {}", npoints * 4);
    src.push_str(
        "  v_add_u32 v5, v2, s24\n\
         \x20 flat_load_dword v6, s[0:1], v5\n\
         \x20 flat_load_dword v7, s[2:3], s25\n\
         \x20 v_sub_f32 v6, v6, v7\n\
         \x20 v_mac_f32 v8, v6, v6\n\
         \x20 s_add_u32 s25, s25, 4\n\
         \x20 s_add_u32 s23, s23, 1\n",
    );
    let _ = writeln!(src, "  s_cmp_lt_u32 s23, {FEATURES}");
    src.push_str(
        "  s_cbranch_scc1 floop\n\
         \x20 v_cmp_lt_f32 v8, v9\n\
         \x20 v_mov_b32 v11, s21\n\
         \x20 v_cndmask_b32 v10, v10, v11\n\
         \x20 v_cndmask_b32 v9, v9, v8\n\
         \x20 s_add_u32 s21, s21, 1\n",
    );
    let _ = writeln!(src, "  s_cmp_lt_u32 s21, {k}");
    src.push_str("  s_cbranch_scc1 cloop\n  flat_store_dword v10, s[4:5], v2\n  s_endpgm\n");
    src
}

pub fn build(env: &PlanEnv, params: &Params) -> Result<Plan, String> {
    let n = params.get("points", 2048);
    let k = params.get("k", 8);
    let parts = env.parts() as u64;
    if n % parts != 0 || n / parts < k {
        return Err(format!("km: points must be a multiple of {parts} and at least k per partition"));
    }
    if k == 0 || k > 64 {
        return Err("km: k must be in 1..=64".into());
    }
    let np = (n / parts) as usize;

    let mut rng = super::rng(0x43);
    // Feature-major points per partition.
    let points: Vec<Vec<Vec<f32>>> = (0..parts)
        .map(|_| {
            (0..FEATURES)
                .map(|_| (0..np).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
                .collect()
        })
        .collect();
    // Forgy-style init: the first k points of partition 0.
    let mut cent = vec![0.0f32; k as usize * FEATURES];
    for c in 0..k as usize {
        for f in 0..FEATURES {
            cent[c * FEATURES + f] = points[0][f][c];
        }
    }

    let mut alloc = env.allocator();
    let mut cmds = Vec::new();
    let kernel = Arc::new(assemble("km", &kernel_src(np as u64, k)).map_err(|e| e.to_string())?);
    let staged = StagedKernel::stage(env, &mut alloc, &mut cmds, kernel);

    let mut x_bases = Vec::new();
    let mut cent_bases = Vec::new();
    let mut assign_bases = Vec::new();
    for (p, x) in points.iter().enumerate() {
        let flat: Vec<f32> = x.iter().flatten().copied().collect();
        let x_b = alloc.alloc((FEATURES * np * 4) as u64, env.hint(p));
        let cent_b = alloc.alloc((k as usize * FEATURES * 4) as u64, env.hint(p));
        let assign_b = alloc.alloc(np as u64 * 4, env.hint(p));
        cmds.push(Cmd::MemWrite { addr: x_b, data: f32_bytes(&flat) });
        cmds.push(Cmd::MemWrite { addr: cent_b, data: f32_bytes(&cent) });
        x_bases.push(x_b);
        cent_bases.push(cent_b);
        assign_bases.push(assign_b);
    }

    let host_points = points.clone();
    let (hc, ha) = (cent_bases.clone(), assign_bases.clone());
    let kk = k as usize;
    for _ in 0..ITERATIONS {
        let batch: Vec<_> = (0..parts as usize)
            .map(|p| {
                let kernarg = [lohi(x_bases[p]), lohi(cent_bases[p]), lohi(assign_bases[p])].concat();
                (env.cp_of(p), staged.spec(p, np as u64, 64, kernarg))
            })
            .collect();
        cmds.push(Cmd::Launch(batch));
        // Host half of the iteration: read the simulated assignments,
        // recompute centroids, broadcast to every replica.
        let (pts, hc, ha) = (host_points.clone(), hc.clone(), ha.clone());
        cmds.push(Cmd::Host(Box::new(move |mem: &mut SparseMemory| {
            let mut cent = vec![0u8; kk * FEATURES * 4];
            mem.read(hc[0], &mut cent);
            let mut cent: Vec<f32> = cent
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let assigns: Vec<Vec<u32>> = ha
                .iter()
                .map(|&a| {
                    let mut raw = vec![0u8; pts[0][0].len() * 4];
                    mem.read(a, &mut raw);
                    raw.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect()
                })
                .collect();
            update(&pts, &assigns, &mut cent, kk);
            let bytes = f32_bytes(&cent);
            for &c in &hc {
                mem.write(c, &bytes);
            }
        })));
    }

    // Oracle: replay the whole loop from the inputs alone.
    let mut ocent = cent.clone();
    let mut oassigns: Vec<Vec<u32>> = Vec::new();
    for _ in 0..ITERATIONS {
        oassigns = points.iter().map(|x| assign(x, np, &ocent, kk)).collect();
        update(&points, &oassigns, &mut ocent, kk);
    }
    let mut checks = Vec::new();
    for (p, a) in oassigns.iter().enumerate() {
        checks.push(Check {
            label: format!("km assignments[{p}]"),
            addr: assign_bases[p],
            expect: u32_bytes(a),
        });
    }
    checks.push(Check {
        label: "km centroids".into(),
        addr: cent_bases[0],
        expect: f32_bytes(&ocent),
    });
    Ok(Plan {
        name: "km".into(),
        cmds,
        checks,
        launches: ITERATIONS as u64 * parts,
    })
}
