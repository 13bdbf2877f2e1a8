//! Retrieval-augmented open-vocabulary species recognition.
//!
//! The engine ranks text chunks of species descriptions against a query image
//! with an ensemble of cross-modal encoders, re-ranks the survivors with
//! intra-modal similarity to per-species anchor images, and hands the
//! summaries of the best species to a generation provider that names the
//! species. Encoders and generators are external: they appear here only as
//! precomputed vectors and as a request/response provider contract.
//!
//! - [`knowledge_base`]: species records, chunking, refinement prompts
//! - [`embedding`]: validated unit-norm vector store and its file formats
//! - [`retrieval`]: per-encoder cross-modal scores, ensemble mean, top-m
//! - [`reranker`]: anchor similarity, combined scores, context selection
//! - [`lmm`]: prompt assembly, providers, answer resolution
//! - [`evaluation`]: metrics, benchmark runs, ablation grids
//! - [`simlab`]: synthetic instances and the brute-force reference pipeline
//! - [`cli`]: the `vrrag` command
//!
//! Scoring code is generic over [`Scalar`]; the aliases below fix it to `f64`,
//! which is what the pipeline and reports use.

pub mod cli;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod knowledge_base;
pub mod lmm;
pub mod provider;
pub mod reranker;
pub mod retrieval;
pub mod scalar;
pub mod simlab;

pub use error::{Error, ErrorKind, ProviderError, Result};
pub use scalar::Scalar;

/// Score type used throughout the pipeline and in reports.
pub type Score = f64;

pub type Candidate = retrieval::ScoredCandidate<f64>;
pub type Candidate32 = retrieval::ScoredCandidate<f32>;
pub type RerankSettings = reranker::RerankConfig<f64>;
pub type RerankSettings32 = reranker::RerankConfig<f32>;
