//! Run manifest written next to the trial logs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::client::unix_millis;
use crate::config::{Overrides, TournamentConfig};
use crate::log::SCHEMA_VERSION;
use crate::tournament::{trial_seed, TrialOutcome, ENGINE_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    /// Some trials failed; the others are usable.
    Partial,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub trial: u32,
    pub seed: u64,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub engine_version: String,
    pub config: TournamentConfig,
    pub overrides: Overrides,
    pub started_at_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at_ms: Option<u64>,
    pub status: RunStatus,
    pub trials: Vec<TrialEntry>,
}

impl RunManifest {
    pub fn start(config: &TournamentConfig, overrides: &Overrides) -> RunManifest {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            engine_version: ENGINE_VERSION.to_string(),
            config: config.clone(),
            overrides: overrides.clone(),
            started_at_ms: unix_millis(),
            finished_at_ms: None,
            status: RunStatus::Running,
            trials: Vec::new(),
        }
    }

    pub fn finish(&mut self, outcomes: &[TrialOutcome]) {
        self.trials = outcomes
            .iter()
            .map(|o| TrialEntry {
                trial: o.trial,
                seed: trial_seed(self.config.seed, o.trial),
                complete: o.result.is_ok(),
                error: o.result.as_ref().err().map(|e| e.to_string()),
            })
            .collect();
        let ok = self.trials.iter().filter(|t| t.complete).count();
        self.status = if ok == self.trials.len() {
            RunStatus::Complete
        } else if ok == 0 {
            RunStatus::Failed
        } else {
            RunStatus::Partial
        };
        self.finished_at_ms = Some(unix_millis());
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text + "\n")
    }

    pub fn read(path: &Path) -> std::io::Result<RunManifest> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}
