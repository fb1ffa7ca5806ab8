//! Core library for spotting unsafe code in compiled Rust binaries.
//!
//! The pipeline labels functions from recorded source spans projected through
//! debug-line maps ([`corpus`]), turns instruction streams into depth-marked
//! token sequences ([`features`]), trains and applies score functions
//! ([`model`]), calibrates a decision threshold with a distribution-free
//! recall guarantee ([`calibrate`]), measures precision/recall/coverage
//! ([`eval`]), and emits ranked proposal sets plus fuzzer focus lists
//! ([`propose`]).

pub mod calibrate;
pub mod corpus;
mod dwarf;
pub mod eval;
pub mod features;
pub mod model;
pub mod propose;
pub mod stats;
