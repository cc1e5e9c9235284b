//! Core of the editbench toolkit: benchmark data model, rating processing,
//! agreement statistics, classical full-reference metrics, metric acquisition
//! and leaderboards for text-guided image-editing studies.

pub mod dataset;
pub mod stats;
pub mod subjective;
pub mod metrics;
pub mod scorer;
pub mod leaderboard;
