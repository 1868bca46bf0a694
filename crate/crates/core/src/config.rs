//! Tournament configuration and its TOML file schema.
//!
//! A config file holds per-condition round limits so that one file can drive
//! all three conditions; [`ConfigFile::resolve`] picks the active condition
//! and applies command-line overrides.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::ModelConfig;
use crate::game::{GroupId, MatrixError, PayoffMatrix, PlayerId};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("round budget violates N < n*m for player {player}: N={budget}, n={max_rounds}, m={matches} (n*m={product})")]
    Budget {
        player: PlayerId,
        budget: u32,
        max_rounds: u32,
        matches: u32,
        product: u64,
    },
    #[error("condition {0} needs a group for every player; missing for player {1}")]
    MissingGroup(Condition, PlayerId),
    #[error("condition GC needs at least two groups")]
    SingleGroup,
    #[error("no round limits configured for condition {0}")]
    MissingCondition(Condition),
    #[error("duplicate player id {0}")]
    DuplicatePlayer(PlayerId),
    #[error("at least two players are required, got {0}")]
    TooFewPlayers(usize),
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("player {0} uses a model agent but no [model] section is configured")]
    MissingModel(PlayerId),
    #[error("random strategy probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("unknown condition {0:?}, expected ri, gc or sa")]
    UnknownCondition(String),
}

/// The three interaction structures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    /// Everyone meets everyone, individual objective.
    Ri,
    /// Only cross-group matches, group objective.
    Gc,
    /// Everyone meets everyone, group and individual objective.
    Sa,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Ri, Condition::Gc, Condition::Sa];

    pub fn uses_groups(self) -> bool {
        !matches!(self, Condition::Ri)
    }

    pub fn key(self) -> &'static str {
        match self {
            Condition::Ri => "ri",
            Condition::Gc => "gc",
            Condition::Sa => "sa",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Ri => "RI",
            Condition::Gc => "GC",
            Condition::Sa => "SA",
        })
    }
}

impl FromStr for Condition {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ri" => Ok(Condition::Ri),
            "gc" => Ok(Condition::Gc),
            "sa" => Ok(Condition::Sa),
            _ => Err(ConfigError::UnknownCondition(s.to_string())),
        }
    }
}

/// Which agent drives a player.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentKind {
    AlwaysCooperate,
    AlwaysDefect,
    TitForTat,
    GrimTrigger,
    /// Plays A with probability `p`, seeded per trial and player.
    Random {
        p: f64,
    },
    /// Plays A and asks to leave the match after its `round`-th round.
    ExitAfterRound {
        round: u32,
    },
    /// Backed by the configured chat-completion model.
    Model,
}

impl AgentKind {
    pub fn is_model(&self) -> bool {
        matches!(self, AgentKind::Model)
    }
}

/// How scripted agents answer post-match questions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaAnswerMode {
    /// Answers from the ground truth computed on the match log.
    #[default]
    Oracle,
    /// Answers the opposite of the ground truth.
    Inverted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerSpec {
    pub id: PlayerId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<GroupId>,
    pub agent: AgentKind,
    #[serde(default)]
    pub meta_answers: MetaAnswerMode,
}

/// Post-match question settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaSettings {
    pub enabled: bool,
    /// Minimum share of opponent moves matching the tit-for-tat prediction.
    pub strategy_threshold: f64,
    /// Share of A-after-our-B replies above which the opponent counts as forgiving.
    pub forgiving_threshold: f64,
    /// Also ask for the player's own total score in the match.
    pub state_question: bool,
}

impl Default for MetaSettings {
    fn default() -> Self {
        MetaSettings {
            enabled: true,
            strategy_threshold: 0.75,
            forgiving_threshold: 0.25,
            state_question: false,
        }
    }
}

/// Fully resolved settings for one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TournamentConfig {
    pub condition: Condition,
    pub players: Vec<PlayerSpec>,
    /// Round cap per match (n).
    pub max_rounds: u32,
    /// Round budget per player over the whole trial (N).
    pub budget: u32,
    /// Planning cadence in rounds (K).
    pub plan_interval: u32,
    pub trials: u32,
    pub seed: u64,
    pub matrix: PayoffMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub meta: MetaSettings,
    /// Tell agents how many budget rounds they have left.
    #[serde(default = "default_true")]
    pub show_budget: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
}

fn default_true() -> bool {
    true
}

impl TournamentConfig {
    /// `groups` players per group, each driven by `agent`, ids assigned in order.
    pub fn uniform(
        condition: Condition,
        groups: u32,
        per_group: u32,
        agent: AgentKind,
        max_rounds: u32,
        budget: u32,
    ) -> TournamentConfig {
        let players = (0..groups * per_group)
            .map(|i| PlayerSpec {
                id: PlayerId(i),
                group: Some(GroupId(i / per_group)),
                agent: agent.clone(),
                meta_answers: MetaAnswerMode::Oracle,
            })
            .collect();
        TournamentConfig {
            condition,
            players,
            max_rounds,
            budget,
            plan_interval: 5,
            trials: 1,
            seed: 0,
            matrix: PayoffMatrix::default(),
            model: None,
            meta: MetaSettings::default(),
            show_budget: true,
            templates_dir: None,
        }
    }

    pub fn player_ids(&self) -> Vec<PlayerId> {
        self.players.iter().map(|p| p.id).collect()
    }

    pub fn player(&self, id: PlayerId) -> Option<&PlayerSpec> {
        self.players.iter().find(|p| p.id == id)
    }

    /// Group assignment, only for players that have one.
    pub fn groups(&self) -> BTreeMap<PlayerId, GroupId> {
        self.players
            .iter()
            .filter_map(|p| p.group.map(|g| (p.id, g)))
            .collect()
    }

    /// The player's group when the condition uses groups.
    pub fn group_of(&self, id: PlayerId) -> Option<GroupId> {
        if !self.condition.uses_groups() {
            return None;
        }
        self.player(id).and_then(|p| p.group)
    }

    pub fn same_group(&self, a: PlayerId, b: PlayerId) -> bool {
        match (self.group_of(a), self.group_of(b)) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        }
    }

    pub fn uses_model(&self) -> bool {
        self.players.iter().any(|p| p.agent.is_model())
    }

    /// Structural checks; the round-budget inequality lives in [`crate::schedule::validate_budget`].
    pub fn validate_structure(&self) -> Result<(), ConfigError> {
        if self.players.len() < 2 {
            return Err(ConfigError::TooFewPlayers(self.players.len()));
        }
        let mut seen = BTreeSet::new();
        for p in &self.players {
            if !seen.insert(p.id) {
                return Err(ConfigError::DuplicatePlayer(p.id));
            }
            match p.agent {
                AgentKind::Random { p: prob } if !(0.0..=1.0).contains(&prob) => {
                    return Err(ConfigError::Probability(prob));
                }
                AgentKind::Model if self.model.is_none() => {
                    return Err(ConfigError::MissingModel(p.id));
                }
                _ => {}
            }
        }
        if self.max_rounds == 0 {
            return Err(ConfigError::Zero("max_rounds"));
        }
        if self.plan_interval == 0 {
            return Err(ConfigError::Zero("plan_interval"));
        }
        if self.trials == 0 {
            return Err(ConfigError::Zero("trials"));
        }
        self.matrix.validate()?;
        if self.condition.uses_groups() {
            if let Some(p) = self.players.iter().find(|p| p.group.is_none()) {
                return Err(ConfigError::MissingGroup(self.condition, p.id));
            }
            let distinct: BTreeSet<GroupId> = self.players.iter().filter_map(|p| p.group).collect();
            if self.condition == Condition::Gc && distinct.len() < 2 {
                return Err(ConfigError::SingleGroup);
            }
        }
        Ok(())
    }
}

/// Round limits for one condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundLimits {
    pub max_rounds: u32,
    pub budget: u32,
}

/// Either a named preset or explicit rewards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Preset { preset: MatrixPreset },
    Explicit(PayoffMatrix),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixPreset {
    /// 3/3, 0/5, 1/1.
    Prompt,
    /// 3/3, -1/5, 0/0.
    Table,
}

impl MatrixSpec {
    pub fn matrix(&self) -> PayoffMatrix {
        match self {
            MatrixSpec::Preset {
                preset: MatrixPreset::Prompt,
            } => PayoffMatrix::PROMPT_DEFAULT,
            MatrixSpec::Preset {
                preset: MatrixPreset::Table,
            } => PayoffMatrix::TABLE,
            MatrixSpec::Explicit(m) => *m,
        }
    }
}

impl Default for MatrixSpec {
    fn default() -> Self {
        MatrixSpec::Preset {
            preset: MatrixPreset::Prompt,
        }
    }
}

/// The on-disk config document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub condition: Condition,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default = "default_plan_interval")]
    pub plan_interval: u32,
    #[serde(default = "default_true")]
    pub show_budget: bool,
    #[serde(default)]
    pub matrix: MatrixSpec,
    pub conditions: BTreeMap<Condition, RoundLimits>,
    pub players: Vec<PlayerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub meta: MetaSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
}

fn default_trials() -> u32 {
    5
}

fn default_plan_interval() -> u32 {
    5
}

/// Values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut file = ConfigFile::parse(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })?;
        // relative template paths are relative to the config file
        if let (Some(dir), Some(parent)) = (file.templates_dir.as_mut(), path.parent()) {
            if dir.is_relative() {
                *dir = parent.join(&*dir);
            }
        }
        Ok(file)
    }

    pub fn parse(text: &str) -> Result<ConfigFile, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<inline>"),
            message: e.to_string(),
        })
    }

    pub fn resolve(&self, overrides: &Overrides) -> Result<TournamentConfig, ConfigError> {
        let condition = overrides.condition.unwrap_or(self.condition);
        let limits = self
            .conditions
            .get(&condition)
            .ok_or(ConfigError::MissingCondition(condition))?;
        let mut model = self.model.clone();
        if let Some(m) = model.as_mut() {
            if let Some(endpoint) = &overrides.endpoint {
                m.endpoint = endpoint.clone();
            }
            if let Some(name) = &overrides.model {
                m.model = name.clone();
            }
        }
        let config = TournamentConfig {
            condition,
            players: self.players.clone(),
            max_rounds: limits.max_rounds,
            budget: limits.budget,
            plan_interval: self.plan_interval,
            trials: overrides.trials.unwrap_or(self.trials),
            seed: overrides.seed.unwrap_or(self.seed),
            matrix: self.matrix.matrix(),
            model,
            meta: self.meta.clone(),
            show_budget: self.show_budget,
            templates_dir: self.templates_dir.clone(),
        };
        config.validate_structure()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
condition = "sa"
seed = 7
trials = 5

[conditions.ri]
max_rounds = 10
budget = 40
[conditions.gc]
max_rounds = 10
budget = 25
[conditions.sa]
max_rounds = 10
budget = 40

[[players]]
id = 0
group = 0
agent = { kind = "tit_for_tat" }

[[players]]
id = 1
group = 1
agent = { kind = "random", p = 0.5 }
meta_answers = "inverted"
"#;

    #[test]
    fn parses_and_resolves() {
        let file = ConfigFile::parse(SAMPLE).unwrap();
        let config = file.resolve(&Overrides::default()).unwrap();
        assert_eq!(config.condition, Condition::Sa);
        assert_eq!(config.budget, 40);
        assert_eq!(config.matrix, PayoffMatrix::PROMPT_DEFAULT);
        assert_eq!(config.players[1].agent, AgentKind::Random { p: 0.5 });
        assert_eq!(config.players[1].meta_answers, MetaAnswerMode::Inverted);

        let gc = file
            .resolve(&Overrides {
                condition: Some(Condition::Gc),
                seed: Some(99),
                ..Overrides::default()
            })
            .unwrap();
        assert_eq!(gc.budget, 25);
        assert_eq!(gc.seed, 99);
    }

    #[test]
    fn matrix_preset_and_explicit() {
        let table = format!("{SAMPLE}\n[matrix]\npreset = \"table\"\n");
        let config = ConfigFile::parse(&table)
            .unwrap()
            .resolve(&Overrides::default())
            .unwrap();
        assert_eq!(config.matrix, PayoffMatrix::TABLE);

        let explicit =
            format!("{SAMPLE}\n[matrix]\nreward_aa = 4\nreward_ab = [0, 6]\nreward_bb = 2\n");
        let config = ConfigFile::parse(&explicit)
            .unwrap()
            .resolve(&Overrides::default())
            .unwrap();
        assert_eq!(config.matrix.reward_ab, (0, 6));

        let broken =
            format!("{SAMPLE}\n[matrix]\nreward_aa = 1\nreward_ab = [0, 6]\nreward_bb = 2\n");
        let err = ConfigFile::parse(&broken)
            .unwrap()
            .resolve(&Overrides::default())
            .unwrap_err();
        assert!(matches!(err, ConfigError::Matrix(_)));
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = SAMPLE.replace("trials = 5", "trials = 5\nbogus = 1");
        assert!(matches!(
            ConfigFile::parse(&text),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn group_conditions_need_groups() {
        let mut config =
            TournamentConfig::uniform(Condition::Sa, 2, 2, AgentKind::TitForTat, 10, 20);
        config.players[3].group = None;
        assert!(matches!(
            config.validate_structure(),
            Err(ConfigError::MissingGroup(Condition::Sa, PlayerId(3)))
        ));
        config.condition = Condition::Ri;
        assert!(config.validate_structure().is_ok());

        let single = TournamentConfig::uniform(Condition::Gc, 1, 4, AgentKind::TitForTat, 10, 20);
        assert!(matches!(
            single.validate_structure(),
            Err(ConfigError::SingleGroup)
        ));
    }

    #[test]
    fn zero_parameters_rejected() {
        let mut config =
            TournamentConfig::uniform(Condition::Ri, 1, 2, AgentKind::TitForTat, 10, 5);
        config.trials = 0;
        assert!(matches!(
            config.validate_structure(),
            Err(ConfigError::Zero("trials"))
        ));
        config.trials = 1;
        config.plan_interval = 0;
        assert!(matches!(
            config.validate_structure(),
            Err(ConfigError::Zero("plan_interval"))
        ));
    }

    #[test]
    fn model_agents_need_model_section() {
        let config = TournamentConfig::uniform(Condition::Ri, 1, 2, AgentKind::Model, 10, 5);
        assert!(matches!(
            config.validate_structure(),
            Err(ConfigError::MissingModel(_))
        ));
    }

    #[test]
    fn condition_from_str() {
        assert_eq!("SA".parse::<Condition>().unwrap(), Condition::Sa);
        assert!("xx".parse::<Condition>().is_err());
    }
}
