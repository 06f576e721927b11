//! HTTP API and command-line front end for the `commentlens` engine.

pub mod api;
pub mod cli;
