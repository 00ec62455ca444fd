//! Shared helpers for the criterion benches.

use gsim_core::platform::PlatformConfig;
use gsim_core::runner::{Mode, RunSpec};
use gsim_core::workloads::Params;

/// A ready-to-run spec for `workload` on `platform` with one override.
pub fn spec(workload: &str, platform: &str, mode: Mode, workers: usize, kv: &[(&str, u64)]) -> RunSpec {
    let mut params = Params::default();
    for (k, v) in kv {
        params.0.insert((*k).to_string(), *v);
    }
    RunSpec {
        workload: workload.into(),
        config: PlatformConfig::preset(platform).unwrap(),
        mode,
        workers,
        verify: false,
        trace: false,
        params,
    }
}
