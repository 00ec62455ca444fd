//! Line-oriented assembler for the mini-SIMT ISA.
//!
//! Grammar (one statement per line, `;` starts a comment):
//!
//! ```text
//! .vgprs 8            ; vector registers per lane (default 8)
//! .lds 4096           ; LDS bytes per work-group (default 0)
//! loop:               ; label
//!   v_add_u32 v1, v1, 64
//!   s_cmp_lt_u32 s20, s21
//!   s_cbranch_scc1 loop
//!   s_endpgm
//! ```
//!
//! Operands: `sN`, `vN`, `s[N:N+1]` (64-bit memory base pair), integer
//! literals (decimal, `0x` hex, negatives wrap as u32), float literals
//! (containing `.`, stored as IEEE-754 bits), or a label for branches.

use std::collections::HashMap;

use super::{Instruction, Kernel, Opcode, Operand, SGPR_COUNT};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct AsmError {
    pub line: usize,
    pub msg: String,
}

fn err<T>(line: usize, msg: impl Into<String>) -> Result<T, AsmError> {
    Err(AsmError { line, msg: msg.into() })
}

fn opcode_table() -> HashMap<&'static str, Opcode> {
    use Opcode::*;
    [
        SMov, SAddU32, SMulU32, SAndU32, SCmpLtU32, SCbranchScc1, SBranch, SBarrier, SEndpgm,
        VMovB32, VAddU32, VSubU32, VMulLoU32, VAddF32, VSubF32, VMulF32, VMacF32, VXorB32,
        VAndB32, VOrB32, VLshlrevB32, VLshrrevB32, VCmpLtU32, VCmpLtF32, VCndmaskB32, VMbcnt,
        FlatLoadDword, FlatStoreDword, FlatLoadUbyte, FlatStoreByte, DsReadB32, DsWriteB32,
    ]
    .into_iter()
    .map(|op| (op.mnemonic(), op))
    .collect()
}

fn arity(op: Opcode) -> usize {
    use Opcode::*;
    match op {
        SBarrier | SEndpgm => 0,
        SCbranchScc1 | SBranch | VMbcnt => 1,
        SMov | SCmpLtU32 | VMovB32 | VCmpLtU32 | VCmpLtF32 | DsReadB32 | DsWriteB32 => 2,
        SAddU32 | SMulU32 | SAndU32 | VAddU32 | VSubU32 | VMulLoU32 | VAddF32 | VSubF32
        | VMulF32 | VMacF32 | VXorB32 | VAndB32 | VOrB32 | VLshlrevB32 | VLshrrevB32
        | VCndmaskB32 | FlatLoadDword | FlatStoreDword | FlatLoadUbyte | FlatStoreByte => 3,
    }
}

fn takes_label(op: Opcode) -> bool {
    matches!(op, Opcode::SCbranchScc1 | Opcode::SBranch)
}

enum RawOperand {
    Done(Operand),
    Label(String),
}

fn parse_operand(tok: &str, line: usize) -> Result<RawOperand, AsmError> {
    let t = tok.trim();
    if let Some(rest) = t.strip_prefix("s[") {
        let Some(body) = rest.strip_suffix(']') else {
            return err(line, format!("malformed scalar pair `{t}`"));
        };
        let Some((a, b)) = body.split_once(':') else {
            return err(line, format!("malformed scalar pair `{t}`"));
        };
        let (a, b): (u8, u8) = match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return err(line, format!("malformed scalar pair `{t}`")),
        };
        if b != a + 1 || usize::from(b) >= SGPR_COUNT {
            return err(line, format!("scalar pair must be s[n:n+1] within range, got `{t}`"));
        }
        return Ok(RawOperand::Done(Operand::SPair(a)));
    }
    if let Some(n) = t.strip_prefix('s') {
        if let Ok(r) = n.parse::<u8>() {
            if usize::from(r) >= SGPR_COUNT {
                return err(line, format!("sgpr index {r} out of range"));
            }
            return Ok(RawOperand::Done(Operand::SReg(r)));
        }
    }
    if let Some(n) = t.strip_prefix('v') {
        if let Ok(r) = n.parse::<u8>() {
            return Ok(RawOperand::Done(Operand::VReg(r)));
        }
    }
    if let Some(h) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        return match u32::from_str_radix(h, 16) {
            Ok(v) => Ok(RawOperand::Done(Operand::Lit(v))),
            Err(_) => err(line, format!("bad hex literal `{t}`")),
        };
    }
    let first = t.chars().next().unwrap_or(' ');
    if first.is_ascii_digit() || first == '-' {
        if t.contains('.') {
            return match t.parse::<f32>() {
                Ok(v) => Ok(RawOperand::Done(Operand::Lit(v.to_bits()))),
                Err(_) => err(line, format!("bad float literal `{t}`")),
            };
        }
        return match t.parse::<i64>() {
            Ok(v) if (-(1i64 << 31)..1i64 << 32).contains(&v) => {
                Ok(RawOperand::Done(Operand::Lit(v as u32)))
            }
            _ => err(line, format!("bad integer literal `{t}`")),
        };
    }
    if t.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && !t.is_empty() {
        return Ok(RawOperand::Label(t.to_string()));
    }
    err(line, format!("unrecognized operand `{t}`"))
}

pub fn assemble(name: &str, src: &str) -> Result<Kernel, AsmError> {
    let ops = opcode_table();
    let mut labels: HashMap<String, u32> = HashMap::new();
    let mut vgpr_count = 8u32;
    let mut lds_bytes = 0u32;
    // Pass 1: label addresses and directives.
    let mut index = 0u32;
    for (ln, raw) in src.lines().enumerate() {
        let line = ln + 1;
        let text = raw.split(';').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        if let Some(rest) = text.strip_prefix('.') {
            let mut it = rest.split_whitespace();
            let (dir, val) = (it.next().unwrap_or(""), it.next().unwrap_or(""));
            let v: u32 = match val.parse() {
                Ok(v) => v,
                Err(_) => return err(line, format!("directive .{dir} needs a number")),
            };
            match dir {
                "vgprs" => {
                    if v == 0 || v > 255 {
                        return err(line, format!("vgpr count {v} outside 1..=255"));
                    }
                    vgpr_count = v;
                }
                "lds" => lds_bytes = v,
                _ => return err(line, format!("unknown directive .{dir}")),
            }
            continue;
        }
        if let Some(lbl) = text.strip_suffix(':') {
            let lbl = lbl.trim();
            if labels.insert(lbl.to_string(), index).is_some() {
                return err(line, format!("duplicate label `{lbl}`"));
            }
            continue;
        }
        index += 1;
    }
    // Pass 2: instructions.
    let mut instrs = Vec::with_capacity(index as usize);
    for (ln, raw) in src.lines().enumerate() {
        let line = ln + 1;
        let text = raw.split(';').next().unwrap_or("").trim();
        if text.is_empty() || text.starts_with('.') || text.ends_with(':') {
            continue;
        }
        let (mnem, rest) = match text.split_once(char::is_whitespace) {
            Some((m, r)) => (m, r.trim()),
            None => (text, ""),
        };
        let Some(&op) = ops.get(mnem) else {
            return err(line, format!("unknown instruction `{mnem}`"));
        };
        let toks: Vec<&str> = if rest.is_empty() {
            Vec::new()
        } else {
            rest.split(',').collect()
        };
        if toks.len() != arity(op) {
            return err(
                line,
                format!("{mnem} takes {} operands, got {}", arity(op), toks.len()),
            );
        }
        let mut resolved = Vec::with_capacity(toks.len());
        for t in &toks {
            match parse_operand(t, line)? {
                RawOperand::Done(o) => resolved.push(o),
                RawOperand::Label(l) => {
                    if !takes_label(op) {
                        return err(line, format!("`{l}` is not a valid operand for {mnem}"));
                    }
                    let Some(&t) = labels.get(&l) else {
                        return err(line, format!("undefined label `{l}`"));
                    };
                    resolved.push(Operand::Target(t));
                }
            }
        }
        if takes_label(op) && !matches!(resolved[0], Operand::Target(_)) {
            return err(line, format!("{mnem} needs a label operand"));
        }
        instrs.push(Instruction { op, ops: resolved });
    }
    if instrs.is_empty() {
        return err(0, "kernel has no instructions");
    }
    if !matches!(instrs.last().unwrap().op, Opcode::SEndpgm | Opcode::SBranch) {
        return err(0, "kernel must end with s_endpgm or an unconditional branch");
    }
    Ok(Kernel {
        name: name.to_string(),
        instrs,
        vgpr_count,
        lds_bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assembles_loop_with_forward_and_back_labels() {
        let k = assemble(
            "t",
            r#"
            .vgprs 4
            .lds 256
              s_mov s20, 0        ; i = 0
            loop:
              v_add_f32 v1, v1, v2
              s_add_u32 s20, s20, 1
              s_cmp_lt_u32 s20, 10
              s_cbranch_scc1 loop
              s_endpgm
            "#,
        )
        .unwrap();
        assert_eq!(k.vgpr_count, 4);
        assert_eq!(k.lds_bytes, 256);
        assert_eq!(k.instrs.len(), 6);
        assert_eq!(k.instrs[4].ops[0], Operand::Target(1));
    }

    #[test]
    fn operand_forms() {
        let k = assemble(
            "t",
            "flat_load_dword v1, s[4:5], v0\n v_mov_b32 v2, 0x10\n v_mov_b32 v3, 1.5\n v_mov_b32 v4, -1\n s_endpgm\n",
        )
        .unwrap();
        assert_eq!(k.instrs[0].ops[1], Operand::SPair(4));
        assert_eq!(k.instrs[1].ops[1], Operand::Lit(16));
        assert_eq!(k.instrs[2].ops[1], Operand::Lit(1.5f32.to_bits()));
        assert_eq!(k.instrs[3].ops[1], Operand::Lit(u32::MAX));
    }

    #[test]
    fn rejects_unknown_mnemonic_and_bad_arity() {
        assert!(assemble("t", "v_frobnicate v1, v2\ns_endpgm\n").is_err());
        assert!(assemble("t", "v_add_u32 v1, v2\ns_endpgm\n").is_err());
    }

    #[test]
    fn rejects_undefined_label_and_misaligned_pair() {
        assert!(assemble("t", "s_branch nowhere\n").is_err());
        assert!(assemble("t", "flat_load_dword v1, s[4:6], v0\ns_endpgm\n").is_err());
    }

    #[test]
    fn rejects_missing_terminator() {
        let e = assemble("t", "v_mov_b32 v1, 0\n").unwrap_err();
        assert!(e.msg.contains("must end"));
    }
}
