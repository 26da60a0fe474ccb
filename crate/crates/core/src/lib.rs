//! Desk-scale simulator of a distributed file-delivery grid.
//!
//! A metadata catalog tracks files, replicas, and datasets; stations run
//! projects that deliver dataset files to consumer slots out of quota-bound
//! group-fair caches; misses are pulled over a shared-bandwidth fabric
//! along static routes, falling back to an emulated robotic tape archive.
//! Every move is CRC-checked. A single-threaded discrete-event kernel makes
//! whole runs reproducible byte for byte from a seed.

pub mod cache;
pub mod catalog;
pub mod fabric;
pub mod kernel;
pub mod metrics;
pub mod mss;
pub mod rng;
pub mod routing;
pub mod scenario;
pub mod sim;
pub mod station;
pub mod types;
pub mod workload;

pub use sim::{Runner, Sim};
pub use types::{ConsumerId, DatasetId, FileId, GroupId, MssId, NodeId, ProjectId, StationId, Tier};
