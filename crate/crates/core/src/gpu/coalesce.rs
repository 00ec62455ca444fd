//! Lane-address coalescing: the vector-memory unit groups the active
//! lanes' accesses of one FLAT instruction into 64-byte-line requests —
//! one request per distinct line, in first-touch lane order.

use crate::fabric::LINE_BYTES;
use crate::isa::{AccessKind, LaneAccess};

const LINE: u64 = LINE_BYTES as u64;

/// One lane's slice of a coalesced line: where in the line its bytes sit.
#[derive(Debug, Clone, Copy)]
pub struct LaneSlice {
    pub lane: u8,
    pub offset: u8,
    pub len: u8,
}

/// A line-granularity memory request produced by coalescing.
#[derive(Debug)]
pub struct LineReq {
    pub addr: u64,
    /// For loads: which lanes scatter from this line on reply.
    pub lanes: Vec<LaneSlice>,
    /// For stores: the merged byte image and validity mask.
    pub store: Option<(Box<[u8; LINE_BYTES]>, u64)>,
}

/// Group per-lane accesses by 64-byte line. All accesses of one
/// instruction are the same kind (all loads or all stores). Store lanes
/// merge in lane order, so overlapping same-address stores resolve to the
/// highest lane — matching the functional emulator.
pub fn coalesce(accesses: &[LaneAccess]) -> Vec<LineReq> {
    let mut out: Vec<LineReq> = Vec::new();
    for acc in accesses {
        let line = acc.addr & !(LINE - 1);
        let offset = (acc.addr - line) as u8;
        let req = match out.iter_mut().find(|r| r.addr == line) {
            Some(r) => r,
            None => {
                out.push(LineReq { addr: line, lanes: Vec::new(), store: None });
                out.last_mut().unwrap()
            }
        };
        match acc.kind {
            AccessKind::LoadDword | AccessKind::LoadUbyte => {
                req.lanes.push(LaneSlice { lane: acc.lane, offset, len: acc.kind.bytes() as u8 });
            }
            AccessKind::StoreDword(v) => {
                let (data, mask) = req.store.get_or_insert_with(|| (Box::new([0u8; LINE_BYTES]), 0));
                let o = offset as usize;
                data[o..o + 4].copy_from_slice(&v.to_le_bytes());
                *mask |= 0xF << offset;
            }
            AccessKind::StoreByte(v) => {
                let (data, mask) = req.store.get_or_insert_with(|| (Box::new([0u8; LINE_BYTES]), 0));
                data[offset as usize] = v;
                *mask |= 1 << offset;
            }
        }
    }
    out
}
