//! HTTP service and command-line front end for the `modelcmp` engine.

pub mod api;
pub mod bench;
pub mod cli;
