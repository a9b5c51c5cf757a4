//! Batch front-end: configuration, CSV tables, and the commands behind the
//! `qengine` binary.

pub mod commands;
pub mod config;
pub mod table;

pub use commands::{cmd_audit_truncation, cmd_fit, cmd_run_cycle, cmd_sweep};
pub use config::{parse_config, parse_config_str, RunConfig};
pub use table::{Provenance, ResultTable};
