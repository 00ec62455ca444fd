//! Timed GPU front end and cores: command processor, work-group
//! dispatcher, and compute units.

pub mod ace;
pub mod coalesce;
pub mod cp;
pub mod cu;

pub use ace::{AceDispatcher, CuBudget};
pub use coalesce::{coalesce, LaneSlice, LineReq};
pub use cp::CommandProcessor;
pub use cu::{ComputeUnit, CuParams};
