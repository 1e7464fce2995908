//! Batch front-end of the laboratory: TOML configs in, CSV/JSON out.

pub mod commands;
pub mod config;
pub mod expr;
pub mod output;
