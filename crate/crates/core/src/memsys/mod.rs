//! Memory system: sparse backing storage, cache controllers, DRAM
//! controllers, and the address-to-bank mapper.

pub mod cache;
pub mod dram;
pub mod mapper;
pub mod sparse;

pub use cache::{CacheGeometry, CacheUnit, WritePolicy};
pub use dram::DramController;
pub use mapper::{AddressMapper, MapScheme};
pub use sparse::SparseMemory;
