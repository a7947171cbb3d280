//! Deterministic simulator of a tiled multicore that runs interactive
//! secure/insecure workloads under four security architectures and checks
//! strong-isolation guarantees on the resulting event traces.
//!
//! The crate is organized around the simulated machine:
//!
//! - [`machine`]: grid topology, cache geometry, cost constants, cluster maps
//! - [`netsim`]: X-Y / Y-X dimension-ordered mesh routing and containment
//! - [`memsim`]: functional L1/TLB/L2/DRAM hierarchy with purge primitives
//! - [`secmodel`]: per-architecture isolation protocols and the secure kernel
//! - [`engine`]: the simulation loop, workload execution, and metrics
//! - [`heuristic`]: MPKI-trend analysis and cluster core allocation
//! - [`isocheck`]: offline non-interference verification of event logs
//! - [`shell`]: workload generation, file formats, and experiment plans

pub mod engine;
pub mod events;
pub mod heuristic;
pub mod isocheck;
pub mod machine;
pub mod memsim;
pub mod netsim;
pub mod secmodel;
pub mod shell;

pub use engine::{run, InteractiveApp, Process, RunMetrics, RunOptions};
pub use events::{EventKind, SimEvent};
pub use machine::{
    default_config, validate_cluster_map, Cluster, ClusterMap, MachineConfig, MeshCoord, TileId,
    TileTag,
};
pub use netsim::{route, verify_containment, RoutePolicy};
pub use secmodel::ArchMode;
