//! Meshless RBF-FD simulation of 2D acoustic waves, with a 5-point FDM
//! reference solver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod fdm;
pub mod geom;
pub mod media;
pub mod nodes;
pub mod post;
pub mod rbf;
pub mod solver;
pub mod source;

pub use config::{Backend, ScenarioConfig};
pub use error::{Error, Result};
pub use geom::{Point, Rect};
pub use nodes::NodeSet;
pub use solver::{run, RunArtifacts, WaveState};
