//! Whole-machine assembly: configuration, presets, the host driver, the
//! per-GPU interconnect, and the builder that wires everything into an
//! [`crate::engine::Engine`].

pub mod alloc;
pub mod build;
pub mod config;
pub mod driver;
pub mod router;

pub use alloc::Allocator;
pub use build::{build, Platform};
pub use config::{ConfigError, PlatformConfig, TopologyKind};
pub use driver::{Cmd, Driver, HostFn};
pub use router::{RdmaEngine, Router};
