//! Entity-annotated corpus indexing and retrieval.
//!
//! The pipeline runs hyperlink extraction ([`wikitext`]), mention scoring
//! ([`scoring`]), mention-preserving chunking ([`chunker`]) and QID-keyed
//! indexing ([`index`]). [`eval`] and [`facts`] consume a committed index.

pub mod chunker;
pub mod config;
pub mod error;
pub mod eval;
pub mod facts;
pub mod index;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod scoring;
pub mod stats;
pub mod synth;
pub mod wikitext;

pub use error::{Error, Result};
