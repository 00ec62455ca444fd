//! Control-plane message payloads carried in [`crate::ReqKind::Ctrl`]
//! requests: kernel launches flowing driver → command processor → ACE,
//! work-group assignments flowing ACE → CU, and the completions flowing
//! back up.

use std::sync::Arc;

use crate::isa::LaunchSpec;

/// Monotonic identifier for one kernel launch, assigned by the driver.
pub type LaunchId = u64;

#[derive(Debug, Clone)]
pub enum Ctrl {
    /// Driver → command processor: start a kernel.
    KernelLaunch(Arc<Launch>),
    /// Command processor → driver: all work-groups of a launch retired.
    KernelDone { launch: LaunchId },
    /// Command processor → ACE: schedule this launch's work-groups.
    AceLaunch(Arc<Launch>),
    /// ACE → command processor: this ACE dispatched and retired all
    /// work-groups it was given for the launch.
    AceDone { launch: LaunchId },
    /// ACE → CU: run one work-group.
    WgDispatch(Box<WgAssign>),
    /// CU → ACE: the work-group's wavefronts all hit `s_endpgm`.
    WgDone { launch: LaunchId, wg: u32 },
    /// Driver → cache: write all dirty lines back and invalidate.
    /// Carried as a Ctrl rather than a bare Flush so the ack can be
    /// matched per launch.
    CacheFlush { launch: LaunchId },
    /// Cache → driver: flush finished (all write-backs acknowledged).
    CacheFlushed { launch: LaunchId },
}

impl Ctrl {
    pub fn name(&self) -> &'static str {
        match self {
            Ctrl::KernelLaunch(_) => "kernel-launch",
            Ctrl::KernelDone { .. } => "kernel-done",
            Ctrl::AceLaunch(_) => "ace-launch",
            Ctrl::AceDone { .. } => "ace-done",
            Ctrl::WgDispatch(_) => "wg-dispatch",
            Ctrl::WgDone { .. } => "wg-done",
            Ctrl::CacheFlush { .. } => "cache-flush",
            Ctrl::CacheFlushed { .. } => "cache-flushed",
        }
    }
}

/// One kernel launch as it travels through the control plane.
#[derive(Debug)]
pub struct Launch {
    pub id: LaunchId,
    pub spec: LaunchSpec,
    /// First flat work-group id this recipient is responsible for.
    pub wg_first: u64,
    /// Number of work-groups this recipient is responsible for.
    pub wg_count: u64,
}

/// A single work-group assignment delivered to a compute unit.
#[derive(Debug, Clone)]
pub struct WgAssign {
    pub launch: LaunchId,
    pub spec: Arc<Launch>,
    pub wg: u32,
}
