//! `sc` — the adjacent-access pattern in two dimensions: a 3×3
//! convolution over a zero-padded W×H image whose rows are split into
//! contiguous per-GPU bands. Three kernels per partition:
//!
//! * an interior kernel for rows whose 3-row window stays in the band,
//! * a top-edge kernel for the band's first row (needs the previous
//!   band's last row), and
//! * a bottom-edge kernel for the band's last row (needs the next
//!   band's first row).
//!
//! The edge kernels take direct pointers to the three source rows, so
//! remote reads are confined to one row per internal band edge and the
//! cross-GPU byte count does not change when the image grows taller.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;

use crate::isa::asm::assemble;
use crate::platform::Cmd;

use super::{f32_bytes, lohi, Check, Params, Plan, PlanEnv, StagedKernel};

/// Host reference with the kernel's exact accumulation order: mask rows
/// top to bottom, columns left to right, `acc = pixel * mask + acc`.
pub fn convolve(input: &[f32], w: usize, h: usize, mask: &[f32; 9]) -> Vec<f32> {
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (sy, sx) = (y as i64 + dy, x as i64 + dx);
                    let pix = if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                        input[sy as usize * w + sx as usize]
                    } else {
                        0.0
                    };
                    let m = mask[((dy + 1) * 3 + dx + 1) as usize];
                    acc = pix * m + acc;
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Emit one tap: clamp the column to 0 when `x+dx` leaves [0, W) (the
/// wrapped u32 compare catches both edges), load, zero the dead lanes,
/// and accumulate. `row_off` is assembly for the row's element offset
/// term ("v7" = precomputed row base, or "" for a direct row pointer).
fn emit_tap(
    src: &mut String,
    pair: &str,
    mask_pair: &str,
    row_base: Option<&str>,
    w: u64,
    dy: i64,
    dx: i64,
) {
    let _ = writeln!(src, "  v_add_u32 v5, v3, {}", dx as u32);
    let _ = writeln!(src, "  v_cmp_lt_u32 v5, {w}");
    src.push_str("  v_cndmask_b32 v6, 0, v5\n");
    if let Some(base) = row_base {
        let _ = writeln!(src, "  v_add_u32 v6, v6, {base}");
    }
    src.push_str("  v_lshlrev_b32 v6, 2, v6\n");
    let _ = writeln!(src, "  flat_load_dword v8, {pair}, v6");
    src.push_str("  v_cndmask_b32 v8, 0, v8\n");
    let moff = 4 * ((dy + 1) * 3 + dx + 1);
    let _ = writeln!(src, "  flat_load_dword v9, {mask_pair}, {moff}");
    src.push_str("  v_mac_f32 v4, v8, v9\n");
}

/// Interior rows 1..rh-1 of a band. One work-item per pixel; the flat
/// index t maps to (y, x) = (t / W + 1, t mod W) via shifts, so W must
/// be a power of two.
/// kernarg: s[0:1] in band, s[2:3] out band, s[4:5] mask.
fn interior_src(w: u64) -> String {
    let log2w = w.trailing_zeros();
    let mut src = String::from(".vgprs 12\n  s_mul_u32 s20, s16, s17\n  v_add_u32 v1, v0, s20\n");
    let _ = writeln!(src, "  v_lshrrev_b32 v2, {log2w}, v1");
    src.push_str("  v_add_u32 v2, v2, 1\n");
    let _ = writeln!(src, "  v_and_b32 v3, v1, {}", w - 1);
    src.push_str("  v_mov_b32 v4, 0\n");
    for dy in -1i64..=1 {
        // Row element base (y + dy) * W, shared by the row's three taps.
        let _ = writeln!(src, "  v_add_u32 v7, v2, {}", dy as u32);
        let _ = writeln!(src, "  v_lshlrev_b32 v7, {log2w}, v7");
        for dx in -1i64..=1 {
            emit_tap(&mut src, "s[0:1]", "s[4:5]", Some("v7"), w, dy, dx);
        }
    }
    let _ = writeln!(src, "  v_lshlrev_b32 v10, {log2w}, v2");
    src.push_str(
        "  v_add_u32 v10, v10, v3\n\
         \x20 v_lshlrev_b32 v10, 2, v10\n\
         \x20 flat_store_dword v4, s[2:3], v10\n\
         \x20 s_endpgm\n",
    );
    src
}

/// One edge row. The three source rows arrive as direct row pointers,
/// so the same kernel serves the top edge (above = previous band's last
/// row or the zero row) and the bottom edge.
/// kernarg: s[0:1] above, s[2:3] same, s[4:5] below, s[6:7] out row,
/// s[8:9] mask.
fn edge_src(w: u64) -> String {
    let mut src = String::from(".vgprs 12\n  s_mul_u32 s20, s16, s17\n  v_add_u32 v3, v0, s20\n  v_mov_b32 v4, 0\n");
    for (dy, pair) in [(-1i64, "s[0:1]"), (0, "s[2:3]"), (1, "s[4:5]")] {
        for dx in -1i64..=1 {
            emit_tap(&mut src, pair, "s[8:9]", None, w, dy, dx);
        }
    }
    src.push_str(
        "  v_lshlrev_b32 v10, 2, v3\n\
         \x20 flat_store_dword v4, s[6:7], v10\n\
         \x20 s_endpgm\n",
    );
    src
}

pub fn build(env: &PlanEnv, params: &Params) -> Result<Plan, String> {
    let w = params.get("width", 256);
    let h = params.get("height", w);
    let parts = env.parts() as u64;
    if !w.is_power_of_two() || w < 64 {
        return Err("sc: width must be a power of two >= 64".into());
    }
    if h % parts != 0 || h / parts < 2 {
        return Err(format!("sc: height must be a multiple of {parts} with at least 2 rows per band"));
    }
    let rh = h / parts;

    let mut rng = super::rng(0x5C);
    let input: Vec<f32> = (0..w * h).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let mut mask = [0.0f32; 9];
    for m in mask.iter_mut() {
        *m = rng.gen_range(-1.0f32..1.0);
    }
    let expect = convolve(&input, w as usize, h as usize, &mask);

    let mut alloc = env.allocator();
    let mut cmds = Vec::new();
    let interior = Arc::new(assemble("sc_interior", &interior_src(w)).map_err(|e| e.to_string())?);
    let interior = StagedKernel::stage(env, &mut alloc, &mut cmds, interior);
    let edge = Arc::new(assemble("sc_edge", &edge_src(w)).map_err(|e| e.to_string())?);
    let edge = StagedKernel::stage(env, &mut alloc, &mut cmds, edge);

    struct Band {
        input: u64,
        out: u64,
        mask: u64,
        zero: u64,
    }
    let row_bytes = w * 4;
    let mut bands = Vec::new();
    let mut checks = Vec::new();
    for p in 0..parts as usize {
        let input_b = alloc.alloc(rh * row_bytes, env.hint(p));
        let out = alloc.alloc(rh * row_bytes, env.hint(p));
        let mask_b = alloc.alloc(9 * 4, env.hint(p));
        let zero = alloc.alloc(row_bytes, env.hint(p));
        let local = &input[p * (rh * w) as usize..][..(rh * w) as usize];
        cmds.push(Cmd::MemWrite { addr: input_b, data: f32_bytes(local) });
        cmds.push(Cmd::MemWrite { addr: mask_b, data: f32_bytes(&mask) });
        checks.push(Check {
            label: format!("sc out[{p}]"),
            addr: out,
            expect: f32_bytes(&expect[p * (rh * w) as usize..][..(rh * w) as usize]),
        });
        bands.push(Band { input: input_b, out, mask: mask_b, zero });
    }

    let mut interiors = Vec::new();
    let mut tops = Vec::new();
    let mut bottoms = Vec::new();
    for (p, b) in bands.iter().enumerate() {
        if rh > 2 {
            let kernarg = [lohi(b.input), lohi(b.out), lohi(b.mask)].concat();
            interiors.push((env.cp_of(p), interior.spec(p, w * (rh - 2), 64, kernarg)));
        }
        let row = |r: u64| b.input + r * row_bytes;
        let above = if p == 0 { b.zero } else { bands[p - 1].input + (rh - 1) * row_bytes };
        let below = bands.get(p + 1).map_or(b.zero, |q| q.input);
        let top = [lohi(above), lohi(row(0)), lohi(row(1)), lohi(b.out), lohi(b.mask)].concat();
        tops.push((env.cp_of(p), edge.spec(p, w, 64, top)));
        let bottom = [
            lohi(row(rh - 2)),
            lohi(row(rh - 1)),
            lohi(below),
            lohi(b.out + (rh - 1) * row_bytes),
            lohi(b.mask),
        ]
        .concat();
        bottoms.push((env.cp_of(p), edge.spec(p, w, 64, bottom)));
    }
    let launches = (interiors.len() + tops.len() + bottoms.len()) as u64;
    if !interiors.is_empty() {
        cmds.push(Cmd::Launch(interiors));
    }
    cmds.push(Cmd::Launch(tops));
    cmds.push(Cmd::Launch(bottoms));
    Ok(Plan { name: "sc".into(), cmds, checks, launches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platform::PlatformConfig;
    use crate::workloads::{emulate_plan, verify, PlanEnv};

    #[test]
    fn identity_mask_reproduces_input() {
        let mut mask = [0.0f32; 9];
        mask[4] = 1.0;
        let input: Vec<f32> = (0..64 * 64).map(|i| i as f32).collect();
        assert_eq!(convolve(&input, 64, 64, &mask), input);
    }

    #[test]
    fn emulated_plan_matches_oracle_on_sgpu() {
        let env = PlanEnv::of(&PlatformConfig::preset("r9nano").unwrap());
        let mut p = Params::default();
        p.0.insert("width".into(), 64);
        p.0.insert("height".into(), 64);
        let plan = build(&env, &p).unwrap();
        let (mem, _) = emulate_plan(plan.cmds).unwrap();
        assert_eq!(verify(&plan.checks, &mem), Vec::<String>::new());
    }

    #[test]
    fn emulated_plan_matches_oracle_on_dmgpu() {
        let env = PlanEnv::of(&PlatformConfig::preset("dmgpu").unwrap());
        let plan = build(&env, &Params::default()).unwrap();
        let (mem, _) = emulate_plan(plan.cmds).unwrap();
        assert_eq!(verify(&plan.checks, &mem), Vec::<String>::new());
    }
}
