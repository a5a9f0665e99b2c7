//! Fault-tolerant mobile-object directory over a sparse-partition hierarchy.

pub mod directory;
pub mod exact;
pub mod failure;
pub mod generate;
pub mod graph;
pub mod leaders;
pub mod message;
pub mod metrics;
pub mod partition;
pub mod scenario;
pub mod sim;
pub mod spt;

pub use exact::Q;
pub use graph::{EdgeId, Graph, GraphError, NodeId, Weight};
pub use partition::{Hierarchy, Level, Mode};
pub use message::{CostKey, SizeClass};
pub use sim::{EventLog, LogEvent, Sim, SimConfig, SimError};
