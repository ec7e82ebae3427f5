//! Library side of the `tabkit` binary: run configuration and the staged
//! pipeline that turns CSV/TSV tables into benchmark artifacts and scores.

pub mod config;
pub mod pipeline;
