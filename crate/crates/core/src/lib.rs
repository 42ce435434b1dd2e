//! Grid-based macro placement: Bookshelf netlists, masks, metrics, a
//! sequential placement environment and baseline policies.

pub mod canvas;
pub mod env;
pub mod gridnet;
pub mod masks;
pub mod metrics;
pub mod netlist;
pub mod policies;
pub mod synth;

pub use canvas::{Cell, ConstraintMode, Footprint, Grid, GridError, GridSpec, GridState, DEFAULT_GRID};
pub use env::{EnvConfig, EnvError, EpisodeRng, PlacementEnv};
pub use gridnet::{GridNetlist, PhysicalPlacement, Placement};
pub use metrics::MetricReport;
pub use netlist::{MacroSelection, Netlist, NetlistError};
