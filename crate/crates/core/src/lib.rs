//! Full-text document similarity for prior-art search.
//!
//! Documents are turned into feature vectors ([`bow`], [`reduce`],
//! [`embed`]), compared with a catalogue of similarity functions
//! ([`simfuncs`]) and the resulting rankings are scored against citation or
//! relevance labels ([`eval`]).

mod binio;
pub mod bow;
pub mod corpus;
pub mod embed;
mod error;
pub mod eval;
pub mod numfmt;
pub mod reduce;
pub mod simfuncs;
pub mod textproc;

pub use error::{Error, Result};
