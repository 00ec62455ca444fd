//! Address-to-bank mapping for the multi-GPU address space.
//!
//! Two schemes: `InterleaveAll` spreads 4 KB pages round-robin over every
//! bank in the system, banks enumerated lexicographically by (gpu, bank);
//! `PartitionInterleave` first assigns each GPU a contiguous partition
//! (4 GB by default) and interleaves pages over that GPU's local banks.

use serde::Deserialize;

pub const PAGE: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapScheme {
    InterleaveAll,
    PartitionInterleave,
}

/// Where one address lives: which GPU, which DRAM bank on that GPU, and
/// the byte offset within the bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MappedAddr {
    pub gpu: u32,
    pub bank: u32,
    pub offset: u64,
}

#[derive(Debug, Clone)]
pub struct AddressMapper {
    pub scheme: MapScheme,
    pub gpus: u32,
    pub banks_per_gpu: u32,
    pub bank_bytes: u64,
}

impl AddressMapper {
    pub fn new(scheme: MapScheme, gpus: u32, banks_per_gpu: u32, bank_bytes: u64) -> AddressMapper {
        assert!(gpus >= 1 && banks_per_gpu >= 1);
        assert!(bank_bytes % PAGE == 0, "bank capacity must be page aligned");
        AddressMapper { scheme, gpus, banks_per_gpu, bank_bytes }
    }

    pub fn total_bytes(&self) -> u64 {
        u64::from(self.gpus) * u64::from(self.banks_per_gpu) * self.bank_bytes
    }

    /// Per-GPU partition size under `PartitionInterleave`.
    pub fn partition_bytes(&self) -> u64 {
        u64::from(self.banks_per_gpu) * self.bank_bytes
    }

    pub fn map(&self, addr: u64) -> MappedAddr {
        assert!(addr < self.total_bytes(), "address {addr:#x} beyond mapped capacity");
        let in_page = addr % PAGE;
        match self.scheme {
            MapScheme::InterleaveAll => {
                let page = addr / PAGE;
                let nbanks = u64::from(self.gpus) * u64::from(self.banks_per_gpu);
                let global_bank = (page % nbanks) as u32;
                MappedAddr {
                    gpu: global_bank / self.banks_per_gpu,
                    bank: global_bank % self.banks_per_gpu,
                    offset: (page / nbanks) * PAGE + in_page,
                }
            }
            MapScheme::PartitionInterleave => {
                let part = self.partition_bytes();
                let gpu = (addr / part) as u32;
                let local = addr % part;
                let page = local / PAGE;
                let nbanks = u64::from(self.banks_per_gpu);
                MappedAddr {
                    gpu,
                    bank: (page % nbanks) as u32,
                    offset: (page / nbanks) * PAGE + in_page,
                }
            }
        }
    }

    /// GPU owning `addr` (the frequent question on the routing path).
    pub fn owner_gpu(&self, addr: u64) -> u32 {
        self.map(addr).gpu
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn mapper(scheme: MapScheme) -> AddressMapper {
        // 4 GPUs x 8 banks of 4 GB/8 = tiny test banks: use 64 KB banks so
        // the brute-force sweep stays fast.
        AddressMapper::new(scheme, 4, 8, 64 * 1024)
    }

    #[test]
    fn first_page_maps_to_gpu0_bank0_under_both_schemes() {
        for s in [MapScheme::InterleaveAll, MapScheme::PartitionInterleave] {
            let m = mapper(s);
            assert_eq!(m.map(0), MappedAddr { gpu: 0, bank: 0, offset: 0 });
            assert_eq!(m.map(0xFFF).gpu, 0);
            assert_eq!(m.map(0xFFF).offset, 0xFFF);
        }
    }

    #[test]
    fn interleave_all_page8_lands_on_second_gpu() {
        // 32 banks in (gpu, bank) order: page 8 -> global bank 8 -> GPU 1,
        // bank 0.
        let m = mapper(MapScheme::InterleaveAll);
        assert_eq!(m.map(0x8000), MappedAddr { gpu: 1, bank: 0, offset: 0 });
    }

    #[test]
    fn partition_boundary_is_gpu1_bank0_offset0() {
        let m = mapper(MapScheme::PartitionInterleave);
        let part = m.partition_bytes();
        assert_eq!(m.map(part), MappedAddr { gpu: 1, bank: 0, offset: 0 });
        assert_eq!(m.map(part - 1).gpu, 0);
    }

    /// Brute-force page table: every page maps somewhere in range, and the
    /// mapping is a bijection pages <-> (gpu, bank, page slot).
    #[test]
    fn mapping_is_a_page_granularity_bijection() {
        for s in [MapScheme::InterleaveAll, MapScheme::PartitionInterleave] {
            let m = mapper(s);
            let mut seen = HashSet::new();
            for page in 0..m.total_bytes() / PAGE {
                let t = m.map(page * PAGE);
                assert!(t.gpu < m.gpus && t.bank < m.banks_per_gpu);
                assert!(t.offset < m.bank_bytes);
                assert_eq!(t.offset % PAGE, 0);
                assert!(seen.insert((t.gpu, t.bank, t.offset)), "collision for page {page} ({s:?})");
            }
            assert_eq!(seen.len() as u64, m.total_bytes() / PAGE);
        }
    }

    #[test]
    fn banks_fill_evenly_under_interleave_all() {
        let m = mapper(MapScheme::InterleaveAll);
        let mut per_bank = vec![0u64; (m.gpus * m.banks_per_gpu) as usize];
        for page in 0..m.total_bytes() / PAGE {
            let t = m.map(page * PAGE);
            per_bank[(t.gpu * m.banks_per_gpu + t.bank) as usize] += 1;
        }
        let expect = m.bank_bytes / PAGE;
        assert!(per_bank.iter().all(|&n| n == expect));
    }

    #[test]
    #[should_panic(expected = "beyond mapped capacity")]
    fn out_of_range_address_is_fatal() {
        let m = mapper(MapScheme::InterleaveAll);
        m.map(m.total_bytes());
    }
}
