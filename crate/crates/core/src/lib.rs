//! Non-neural session-based recommenders (AR, SR, SKNN, V-SKNN, STAN, VSTAN)
//! and a reproducible benchmark harness around them.

pub mod algorithms;
pub mod corpus;
pub mod evaluation;
pub mod preprocess;
pub mod bench;
pub mod harness;
pub mod stability;
pub mod tuning;
