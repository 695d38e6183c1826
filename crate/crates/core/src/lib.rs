//! Multi-ticket ensembles at desk scale.
//!
//! Train many seeded copies and pruned subnetworks of one small pretrained
//! network, ensemble them by output averaging, and measure prediction and
//! mask diversity.

pub mod config;
pub mod data;
pub mod diversity;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod io;
pub mod model;
pub mod numcore;
pub mod params;
pub mod pruning;
pub mod report;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
pub use params::{ParamVector, Segment};
