//! Tabular retrieval and classification toolkit: serialization, query
//! generation, hashed embeddings, contrastive training and evaluation.

pub mod analysis;
pub mod embed;
pub mod error;
pub mod eval;
pub mod io;
pub mod mining;
pub mod query;
pub mod synth;
pub mod table;
pub mod target;
pub mod train;
pub mod util;

pub use error::{Error, Result};
