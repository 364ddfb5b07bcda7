//! Command-line pipeline around the `nanomorph` library: run configuration
//! parsing, the simulate/estimate/fit/quench workflows, and the bundled film
//! presets.

pub mod commands;
pub mod config;
