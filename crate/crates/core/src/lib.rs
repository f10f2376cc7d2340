//! Cross-architecture binary function similarity over ESIL function strings.
//!
//! The pipeline runs `ingest -> normalize -> dedup -> tokenize`, trains the
//! [`encoder`] with batch-hard mined Circle Loss ([`train`]), and measures
//! retrieval with search pools and vulnerability-style ranking ([`evaluate`]).

pub mod corpus;
pub mod dedup;
pub mod encoder;
pub mod evaluate;
pub mod fixtures;
pub mod error;
pub mod index;
pub mod ingest;
pub mod normalize;
pub mod tokenize;
pub mod train;

pub use error::{Error, Result};
