//! Randomized invariants for the foundational pieces: sparse memory vs a
//! flat byte-array model, address-mapper bijectivity over arbitrary
//! geometries, assembler round-trips, and serial/parallel engine
//! equivalence on generated event chains.

use std::sync::{Arc, Mutex};

use proptest::prelude::*;

use gsim_core::engine::{Component, Ctx, Engine, EventKind, VirtualTime};
use gsim_core::fabric::TopologyBuilder;
use gsim_core::isa::asm::assemble;
use gsim_core::memsys::mapper::{AddressMapper, MapScheme, PAGE};
use gsim_core::memsys::SparseMemory;
use gsim_core::ComponentId;

const SPAN: u64 = 4 * PAGE; // address window exercised by memory cases

fn write_op() -> impl Strategy<Value = (u64, Vec<u8>)> {
    (0..SPAN - 128, prop::collection::vec(any::<u8>(), 1..128))
}

proptest! {
    /// Any interleaving of writes then reads agrees with a flat array
    /// model, including writes and reads that straddle page boundaries.
    #[test]
    fn sparse_memory_matches_flat_model(
        writes in prop::collection::vec(write_op(), 0..40),
        reads in prop::collection::vec((0..SPAN - 256, 1usize..256), 1..20),
    ) {
        let mut mem = SparseMemory::new();
        let mut model = vec![0u8; SPAN as usize];
        for (addr, data) in &writes {
            mem.write(*addr, data);
            model[*addr as usize..*addr as usize + data.len()].copy_from_slice(data);
        }
        for (addr, len) in reads {
            let mut got = vec![0u8; len];
            mem.read(addr, &mut got);
            prop_assert_eq!(&got[..], &model[addr as usize..addr as usize + len]);
        }
    }

    /// The fingerprint is a function of contents alone: replaying the
    /// final bytes as one bulk write yields the same digest, and pages
    /// holding only explicit zeros digest like untouched ones.
    #[test]
    fn fingerprint_depends_only_on_contents(
        writes in prop::collection::vec(write_op(), 0..40),
        zero_addr in 0..SPAN - 128,
        zero_len in 1usize..128,
    ) {
        let mut mem = SparseMemory::new();
        let mut model = vec![0u8; SPAN as usize];
        for (addr, data) in &writes {
            mem.write(*addr, data);
            model[*addr as usize..*addr as usize + data.len()].copy_from_slice(data);
        }
        let mut replay = SparseMemory::new();
        replay.write(0, &model);
        prop_assert_eq!(mem.fingerprint(), replay.fingerprint());

        let before = mem.fingerprint();
        let mut zeroed = mem.clone();
        zeroed.write(zero_addr, &vec![0u8; zero_len]);
        let unchanged = model[zero_addr as usize..zero_addr as usize + zero_len]
            .iter()
            .all(|b| *b == 0);
        if unchanged {
            prop_assert_eq!(zeroed.fingerprint(), before);
        }
    }

    /// A masked line write touches exactly the bytes whose mask bit is
    /// set.
    #[test]
    fn masked_write_touches_exactly_masked_bytes(
        base in prop::collection::vec(any::<u8>(), 64),
        line in prop::collection::vec(any::<u8>(), 64),
        mask in any::<u64>(),
        addr in (0..SPAN / 64 - 1).prop_map(|l| l * 64),
    ) {
        let mut mem = SparseMemory::new();
        mem.write(addr, &base);
        let line: [u8; 64] = line.try_into().unwrap();
        mem.write_masked(addr, &line, mask);
        let mut got = [0u8; 64];
        mem.read(addr, &mut got);
        for i in 0..64 {
            let want = if mask & (1 << i) != 0 { line[i] } else { base[i] };
            prop_assert_eq!(got[i], want, "byte {} mask bit {}", i, mask >> i & 1);
        }
    }

    /// For every geometry and scheme, address mapping is a bijection
    /// between pages and (gpu, bank, page-slot) triples.
    #[test]
    fn mapper_is_bijective_for_any_geometry(
        gpus in 1u32..=4,
        banks in 1u32..=8,
        bank_pages in 1u64..=8,
        partitioned in any::<bool>(),
    ) {
        let scheme = if partitioned {
            MapScheme::PartitionInterleave
        } else {
            MapScheme::InterleaveAll
        };
        let m = AddressMapper::new(scheme, gpus, banks, bank_pages * PAGE);
        let mut seen = std::collections::HashSet::new();
        for page in 0..m.total_bytes() / PAGE {
            let t = m.map(page * PAGE);
            prop_assert!(t.gpu < gpus && t.bank < banks && t.offset < bank_pages * PAGE);
            prop_assert_eq!(t.offset % PAGE, 0);
            prop_assert!(seen.insert((t.gpu, t.bank, t.offset)));
            // Bytes within a page stay together.
            let mid = m.map(page * PAGE + PAGE / 2);
            prop_assert_eq!((mid.gpu, mid.bank), (t.gpu, t.bank));
            prop_assert_eq!(mid.offset, t.offset + PAGE / 2);
        }
        prop_assert_eq!(seen.len() as u64, m.total_bytes() / PAGE);
    }

    /// Generated straight-line programs assemble to one instruction per
    /// statement with operands resolved verbatim.
    #[test]
    fn assembler_preserves_generated_programs(
        body in prop::collection::vec(
            (
                prop::sample::select(vec![
                    "v_add_u32", "v_sub_u32", "v_mul_lo_u32", "v_xor_b32",
                    "v_and_b32", "v_or_b32", "v_add_f32", "v_mul_f32",
                ]),
                0u8..8,
                0u8..8,
                any::<u32>(),
            ),
            1..50,
        ),
    ) {
        let mut src = String::new();
        for (mnem, d, s, lit) in &body {
            src.push_str(&format!("{mnem} v{d}, v{s}, {lit:#x}\n"));
        }
        src.push_str("s_endpgm\n");
        let k = assemble("generated", &src).unwrap();
        prop_assert_eq!(k.instrs.len(), body.len() + 1);
        for (inst, (mnem, d, s, lit)) in k.instrs.iter().zip(&body) {
            prop_assert_eq!(inst.op.mnemonic(), *mnem);
            prop_assert_eq!(inst.ops[0], gsim_core::isa::Operand::VReg(*d));
            prop_assert_eq!(inst.ops[1], gsim_core::isa::Operand::VReg(*s));
            prop_assert_eq!(inst.ops[2], gsim_core::isa::Operand::Lit(*lit));
        }
        prop_assert_eq!(k.code_bytes(), (body.len() as u64 + 1) * 4);
    }
}

/// Self-scheduling component used by the engine equivalence property:
/// each event logs (time, id, step) and reschedules itself after a
/// per-step delay taken from its script.
struct Scripted {
    delays: Vec<u64>,
    step: usize,
    log: Arc<Mutex<Vec<(u64, u32, usize)>>>,
}

impl Component for Scripted {
    fn handle(&mut self, time: VirtualTime, _kind: EventKind, ctx: &mut Ctx) {
        self.log.lock().unwrap().push((time.0, ctx.self_id.0, self.step));
        if let Some(&d) = self.delays.get(self.step) {
            self.step += 1;
            ctx.schedule_self(d, EventKind::Tick);
        }
    }
}

fn run_scripts(scripts: &[(u64, Vec<u64>)], workers: usize) -> (u64, Vec<(u64, u32, usize)>, u64) {
    let log = Arc::new(Mutex::new(Vec::new()));
    let mut eng = Engine::new(TopologyBuilder::new().build());
    for (i, (start, delays)) in scripts.iter().enumerate() {
        let id = eng.register(
            format!("s{i}"),
            Box::new(Scripted { delays: delays.clone(), step: 0, log: log.clone() }),
        );
        eng.schedule(VirtualTime(*start), id, EventKind::Tick).unwrap();
        assert_eq!(id, ComponentId(i as u32));
    }
    let end = if workers == 1 { eng.run_serial() } else { eng.run_parallel(workers) };
    assert_eq!(eng.events_scheduled(), eng.events_handled());
    let mut entries = log.lock().unwrap().clone();
    entries.sort_unstable();
    (end.0, entries, eng.events_handled())
}

proptest! {
    // Each case spins up a worker pool, so keep the case count modest.
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Parallel execution is observationally identical to serial for
    /// arbitrary self-scheduling components, including zero delays that
    /// force many same-timestamp batches.
    #[test]
    fn engine_parallel_equals_serial(
        scripts in prop::collection::vec(
            (0u64..8, prop::collection::vec(0u64..4, 0..24)),
            1..6,
        ),
    ) {
        let serial = run_scripts(&scripts, 1);
        for workers in [2, 3] {
            let par = run_scripts(&scripts, workers);
            prop_assert_eq!(&par, &serial, "workers={}", workers);
        }
    }
}
