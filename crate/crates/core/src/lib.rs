//! Iterated prisoner's dilemma tournaments between scripted and model-backed agents.

pub mod agents;
pub mod client;
pub mod config;
pub mod export;
pub mod game;
pub mod log;
pub mod manifest;
pub mod metrics;
pub mod mock;
pub mod prompt;
pub mod schedule;
pub mod tournament;

pub use config::{Condition, ConfigFile, Overrides, TournamentConfig};
pub use game::{Action, PayoffMatrix, PlayerId};
pub use tournament::{Experiment, TrialError};
