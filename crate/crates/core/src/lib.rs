pub mod cli;
pub mod eval;
pub mod geometry;
pub mod ingest;
pub mod localizer;
pub mod matching;
pub mod retrieval;
pub mod semantic_map;
pub mod synth;
