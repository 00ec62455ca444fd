//! Page-sparse byte-addressable storage, shared by DRAM backing stores,
//! the functional emulator, and the host driver's untimed accesses.

use std::collections::HashMap;

pub const PAGE_BYTES: u64 = 4096;

/// Byte-addressable memory that allocates 4 KB pages on first write.
/// Reads of never-written bytes return zero.
#[derive(Debug, Default, Clone)]
pub struct SparseMemory {
    pages: HashMap<u64, Box<[u8; PAGE_BYTES as usize]>>,
}

impl SparseMemory {
    pub fn new() -> SparseMemory {
        SparseMemory::default()
    }

    pub fn read(&self, addr: u64, buf: &mut [u8]) {
        let mut off = 0usize;
        while off < buf.len() {
            let a = addr + off as u64;
            let page = a / PAGE_BYTES;
            let in_page = (a % PAGE_BYTES) as usize;
            let n = (PAGE_BYTES as usize - in_page).min(buf.len() - off);
            match self.pages.get(&page) {
                Some(p) => buf[off..off + n].copy_from_slice(&p[in_page..in_page + n]),
                None => buf[off..off + n].fill(0),
            }
            off += n;
        }
    }

    pub fn write(&mut self, addr: u64, data: &[u8]) {
        let mut off = 0usize;
        while off < data.len() {
            let a = addr + off as u64;
            let page = a / PAGE_BYTES;
            let in_page = (a % PAGE_BYTES) as usize;
            let n = (PAGE_BYTES as usize - in_page).min(data.len() - off);
            let p = self
                .pages
                .entry(page)
                .or_insert_with(|| Box::new([0u8; PAGE_BYTES as usize]));
            p[in_page..in_page + n].copy_from_slice(&data[off..off + n]);
            off += n;
        }
    }

    pub fn read_u32(&self, addr: u64) -> u32 {
        let mut b = [0u8; 4];
        self.read(addr, &mut b);
        u32::from_le_bytes(b)
    }

    pub fn write_u32(&mut self, addr: u64, v: u32) {
        self.write(addr, &v.to_le_bytes());
    }

    pub fn read_u8(&self, addr: u64) -> u8 {
        let mut b = [0u8; 1];
        self.read(addr, &mut b);
        b[0]
    }

    /// Apply a 64-byte masked write (bit i of `mask` marks byte i valid).
    pub fn write_masked(&mut self, addr: u64, data: &[u8; 64], mask: u64) {
        if mask == u64::MAX {
            self.write(addr, data);
            return;
        }
        let mut i = 0;
        while i < 64 {
            if mask & (1 << i) != 0 {
                let start = i;
                while i < 64 && mask & (1 << i) != 0 {
                    i += 1;
                }
                self.write(addr + start as u64, &data[start..i]);
            } else {
                i += 1;
            }
        }
    }

    pub fn touched_pages(&self) -> usize {
        self.pages.len()
    }

    /// Canonical digest of the contents: FNV-1a over pages in ascending
    /// order, skipping all-zero pages so a page explicitly written with
    /// zeros compares equal to one never touched.
    pub fn fingerprint(&self) -> u64 {
        const OFFSET: u64 = 0xcbf29ce484222325;
        const PRIME: u64 = 0x100000001b3;
        let mut pages: Vec<&u64> = self.pages.keys().collect();
        pages.sort_unstable();
        let mut h = OFFSET;
        for &page in pages {
            let data = &self.pages[&page];
            if data.iter().all(|b| *b == 0) {
                continue;
            }
            for b in page.to_le_bytes().iter().chain(data.iter()) {
                h = (h ^ u64::from(*b)).wrapping_mul(PRIME);
            }
        }
        h
    }
}
