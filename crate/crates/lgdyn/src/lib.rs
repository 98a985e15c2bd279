//! Linear-graph modeling of multi-domain dynamic systems.
//!
//! The crate builds lumped-parameter models as linear graphs (directed
//! edges carrying across/through variable pairs over electrical,
//! mechanical and fluid domains), selects a normal tree, derives the
//! symbolic state-space model by eliminating secondary variables, and
//! provides fixed-step simulation plus genetic-algorithm parameter
//! calibration against recorded trajectories.

pub mod estimate;
pub mod graph;
pub mod io;
pub mod models;
pub mod simulate;
pub mod statespace;
pub mod symexpr;
