//! Library surface behind the `vanishlab` binary: config parsing and
//! echoing, experiment dispatch, run manifests, and the SVG renderer. The
//! binary itself only handles arguments and file writes.

pub mod config;
pub mod manifest;
pub mod run;
pub mod svg;
