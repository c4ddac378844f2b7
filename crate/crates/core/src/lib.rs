//! Topic mining for retail transaction baskets.
//!
//! The crate treats each shopping basket as a bag of product tokens and fits
//! a latent topic mixture over them. It covers the full workflow: ingesting
//! transaction logs, building a filtered sparse corpus, training by online
//! variational inference (with a collapsed Gibbs sampler as a cross-check),
//! held-out perplexity, relevance-ranked topic summaries, seasonal prevalence
//! analysis, demographic prediction from topic mixtures, and survey
//! instruments for human topic evaluation.

pub mod analysis;
mod assignment;
pub mod corpus;
pub mod error;
pub mod generator;
pub mod inference;
pub mod logreg;
pub mod metrics;
mod serialize;
pub mod survey;

pub use error::{Error, Result};
