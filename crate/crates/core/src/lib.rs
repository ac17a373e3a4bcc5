//! Fast-failover protection for dynamic multicast groups.
//!
//! The crate builds F-link fault tolerant multicast trees, compiles them into
//! an emulated OpenFlow-style dataplane and checks delivery under injected
//! link failures.
//!
//! - [`netgraph`]: topologies and deterministic shortest paths.
//! - [`treealg`]: multicast trees and the SPT / DST join strategies.
//! - [`protect`]: primary and recursive backup tree maintenance.
//! - [`dataplane`]: flow tables, fast-failover groups, packet forwarding.
//! - [`failsim`]: failure injection, tolerance checks, recovery models.
//! - [`harness`]: scenario replay, metrics, experiment presets.

pub mod dataplane;
pub mod failsim;
pub mod harness;
pub mod netgraph;
pub mod protect;
pub mod treealg;
