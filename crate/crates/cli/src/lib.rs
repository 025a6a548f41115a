//! Command-line front end for the catapult simulator: configuration,
//! per-mode runners, parallel sweeps and SVG plots.

pub mod config;
pub mod run;
pub mod svg;
pub mod sweep;

pub use config::{Mode, OutputFormat, RunConfig};
pub use run::{run, Options, Outcome};
