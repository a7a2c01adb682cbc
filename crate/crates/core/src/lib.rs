//! Human-object interaction detection head built on functional
//! generalization: objects that people interact with alike are clustered, and
//! training interactions are replicated onto cluster mates before fitting a
//! multi-label predicate classifier.

pub mod augment;
pub mod cli;
pub mod datamodel;
pub mod error;
pub mod eval;
pub mod funcsim;
pub mod geometry;
pub mod jsonl;
pub mod nn;
pub mod pipeline;
pub mod provenance;
pub mod synth;

pub use error::{HoiError, Result};
