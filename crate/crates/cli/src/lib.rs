//! Command-line tools and the HTTP service around `hlc-core`.

pub mod commands;
pub mod service;
