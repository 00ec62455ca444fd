//! Deterministic cycle-level multi-GPU architectural simulator.
//!
//! The crate is organized around a small event-driven kernel ([`engine`])
//! and a message-passing fabric ([`fabric`]). Everything the simulator
//! models — compute units, caches, DRAM controllers, interconnects — is a
//! component that owns its state and talks to the rest of the system
//! exclusively through requests on connections. On top of that sit the
//! SIMT instruction set and functional emulator ([`isa`]), the timed GPU
//! and memory models ([`gpu`], [`memsys`]), platform builders for the
//! four shipped topologies ([`platform`]), and the built-in workload
//! suite with independent host oracles ([`workloads`]).

pub mod engine;
pub mod fabric;
pub mod gpu;
pub mod isa;
pub mod memsys;
pub mod metrics;
pub mod platform;
pub mod proto;
pub mod runner;
pub mod workloads;

pub use engine::{Component, ComponentId, Ctx, Engine, Event, EventKind, VirtualTime};
pub use fabric::{ConnectionId, PortId, Request, RequestId};
