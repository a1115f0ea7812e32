//! Content salience maps: length-controlled summarization probes, question
//! clustering, claim-entailment answerability and the agreement metrics
//! built on top of them.

pub mod analysis;
pub mod domain;
pub mod error;
pub mod gateway;
pub mod metrics;
pub mod prompts;
pub mod stages;

pub use error::{Error, Result};
