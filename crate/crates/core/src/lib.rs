//! Dependency-ordered generative training for vision-language compositionality.
//!
//! Captions are parsed into dependency trees, each tree becomes a causal
//! graphical model over its tokens, and a small decoder learns
//! `P(word | tree ancestors, relation type, image)`. Candidate captions for an
//! image are ranked by their log-likelihood under that factorization.

pub mod category;
pub mod cli;
pub mod cgm;
pub mod config;
pub mod conllu;
pub mod dataset;
pub mod decoder;
pub mod manifest;
pub mod mask;
pub mod pipeline;
pub mod scorer;
pub mod seed;
pub mod subword;
pub mod synthbench;
pub mod tensor;
pub mod threads;
pub mod trainer;
pub mod verify;
