//! Hub-text search for cross-modal encoders.
//!
//! Finds a single token sequence whose embedding sits close to many image
//! embeddings at once, and measures what such a text does to CLIPScore-based
//! caption evaluation and to image-to-text retrieval.
//!
//! * [`embedding`]: vectors, similarity measures and the mean-similarity objective.
//! * [`hub`]: closed-form optimal hub embeddings and a numeric oracle.
//! * [`encoder`]: vocabularies, the toy encoder, fixture files, the remote protocol.
//! * [`candidates`]: initial hypotheses from inversion output or a text corpus.
//! * [`search`]: beam local search over single-token substitutions.
//! * [`retrieval`], [`caption`]: the two evaluation harnesses.
//! * [`toyworld`]: synthetic fixtures with a planted hub.

pub mod candidates;
pub mod caption;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod hub;
pub mod retrieval;
pub mod search;
pub mod toyworld;

pub use embedding::{Embedding, Measure, Objective, SimilarityConfig, TuningSet};
pub use encoder::{TextEncoder, TokenSequence, ToyEncoder, Vocabulary};
pub use error::{Error, Result};
pub use hub::{optimal_hub, HubSolution};
pub use search::{beam_local_search, SearchConfig, SearchReport};
