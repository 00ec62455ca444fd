//! Run a named workload on a configured platform in either execution
//! mode, optionally verify the result against the workload's host
//! oracle, and produce a stable metrics table.

use std::fmt::Write as _;
use std::time::Instant;

use crate::engine::{ComponentId, Hook, HookInfo, HookPos, VirtualTime};
use crate::memsys::SparseMemory;
use crate::metrics::Metrics;
use crate::platform::{build, PlatformConfig};
use crate::workloads::{build_plan, emulate_plan, verify, Params, PlanEnv};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Emulate,
    Simulate,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Mode, String> {
        match s {
            "emulate" => Ok(Mode::Emulate),
            "simulate" => Ok(Mode::Simulate),
            other => Err(format!("unknown mode `{other}` (emulate | simulate)")),
        }
    }
}

pub struct RunSpec {
    pub workload: String,
    pub config: PlatformConfig,
    pub mode: Mode,
    pub workers: usize,
    pub verify: bool,
    pub trace: bool,
    pub params: Params,
}

/// One `metric,component,value` row.
pub type Row = (String, String, String);

pub struct RunOutcome {
    /// Sorted metric rows; identical for identical specs except the
    /// wall-clock and KIPS rows.
    pub rows: Vec<Row>,
    /// Oracle diff report; empty means verified or not requested.
    pub mismatches: Vec<String>,
    pub total_cycles: u64,
    pub pcie_bytes: u64,
    pub instructions: u64,
    /// Final backing-memory contents.
    pub memory: SparseMemory,
}

/// Prints one line per dispatched event to stderr.
struct TraceHook;

impl Hook for TraceHook {
    fn observe(&mut self, _pos: HookPos, time: VirtualTime, subject: ComponentId, info: &HookInfo) {
        if let HookInfo::Event { kind } = info {
            eprintln!("[{}] c{} {kind}", time.0, subject.0);
        }
    }
}

pub fn run(spec: RunSpec) -> Result<RunOutcome, String> {
    if spec.workers == 0 {
        return Err("workers must be >= 1".into());
    }
    let env = PlanEnv::of(&spec.config);
    let plan = build_plan(&spec.workload, &env, &spec.params)?;
    let checks = plan.checks;
    let started = Instant::now();
    let mut rows: Vec<Row> = Vec::new();
    let outcome = match spec.mode {
        Mode::Emulate => {
            let (mem, instructions) = emulate_plan(plan.cmds)?;
            let mismatches = if spec.verify { verify(&checks, &mem) } else { Vec::new() };
            rows.push(row("instructions_total", "engine", instructions));
            RunOutcome {
                rows: Vec::new(),
                mismatches,
                total_cycles: 0,
                pcie_bytes: 0,
                instructions,
                memory: mem,
            }
        }
        Mode::Simulate => {
            let mut platform = build(spec.config, plan.cmds);
            let metrics = Metrics::new();
            for (pos, h) in metrics.hooks() {
                platform.engine.register_hook(pos, h).map_err(|e| e.to_string())?;
            }
            if spec.trace {
                platform
                    .engine
                    .register_hook(HookPos::BeforeEvent, Box::new(TraceHook))
                    .map_err(|e| e.to_string())?;
            }
            platform.start();
            let end = if spec.workers == 1 {
                platform.engine.run_serial()
            } else {
                platform.engine.run_parallel(spec.workers)
            };
            let memory = platform.store.lock().unwrap().clone();
            let mismatches = if spec.verify { verify(&checks, &memory) } else { Vec::new() };
            let st = metrics.state();
            for (&(comp, metric), &v) in &st.counters {
                rows.push(row(metric, platform.engine.component_name(comp), v));
            }
            for (&conn, &v) in &st.conn_bytes {
                rows.push(row("conn_bytes", &format!("conn{}", conn.0), v));
            }
            for (&conn, &v) in &st.conn_requests {
                rows.push(row("conn_requests", &format!("conn{}", conn.0), v));
            }
            for (&id, &(start, done)) in &st.launches {
                rows.push(row("kernel_start_cycle", &format!("launch{id}"), start.0));
                if let Some(d) = done {
                    rows.push(row("kernel_end_cycle", &format!("launch{id}"), d.0));
                }
            }
            let pcie_bytes = st.bytes_on(platform.pcie_conn);
            let instructions = st.total("instructions");
            rows.push(row("pcie_bytes", "pcie0", pcie_bytes));
            rows.push(row("total_cycles", "engine", end.0));
            rows.push(row("instructions_total", "engine", instructions));
            drop(st);
            RunOutcome {
                rows: Vec::new(),
                mismatches,
                total_cycles: end.0,
                pcie_bytes,
                instructions,
                memory,
            }
        }
    };
    let mut outcome = RunOutcome { rows, ..outcome };
    let wall = started.elapsed().as_secs_f64();
    let kips = outcome.instructions as f64 / wall / 1e3;
    outcome.rows.push(("wall_seconds".into(), "host".into(), format!("{wall:.6}")));
    outcome.rows.push(("kips".into(), "host".into(), format!("{kips:.3}")));
    outcome.rows.sort();
    Ok(outcome)
}

fn row(metric: &str, component: &str, value: u64) -> Row {
    (metric.to_string(), component.to_string(), value.to_string())
}

/// Render the sorted rows under the `metric,component,value` header.
pub fn to_csv(rows: &[Row]) -> String {
    let mut out = String::from("metric,component,value\n");
    for (m, c, v) in rows {
        let _ = writeln!(out, "{m},{c},{v}");
    }
    out
}
