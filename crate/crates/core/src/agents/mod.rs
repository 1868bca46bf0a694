//! The agent contract, the filtered view agents play from, and agent construction.

mod model;
mod scripted;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientError, ModelClient, ModelExchange};
use crate::config::{AgentKind, Condition, TournamentConfig};
use crate::game::{Action, GroupId, MatchRecord, PlayerId};
use crate::prompt::{PromptError, PromptSet};

pub use model::ModelAgent;
pub use scripted::{ScriptedAgent, Strategy};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Backend(#[from] ClientError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("plan text is empty")]
    EmptyPlan,
    #[error("no meta questions to ask")]
    NoQuestions,
}

/// One round of the current match seen from one side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewRound {
    pub own: Action,
    pub opponent: Action,
    pub own_points: i64,
    pub opponent_points: i64,
}

/// Everything a player may know when choosing a move.
///
/// Only rounds of the current match are included; an unmasked opponent is
/// identified by id (and group when the condition uses groups).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerView {
    pub self_id: PlayerId,
    pub self_group: Option<GroupId>,
    /// `None` while the opponent is masked.
    pub opponent: Option<PlayerId>,
    pub opponent_group: Option<GroupId>,
    pub masked: bool,
    pub match_id: u32,
    pub rounds: Vec<ViewRound>,
    pub remaining_budget: u32,
    /// Sum of the player's payoffs so far in the trial.
    pub total_score: i64,
    pub condition: Condition,
    pub plan: Option<Plan>,
    /// The player's global round number about to be played (1-based).
    pub global_round: u32,
}

impl PlayerView {
    /// The view of `me` on the in-progress `record`.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        config: &TournamentConfig,
        record: &MatchRecord,
        me: PlayerId,
        masked: bool,
        remaining_budget: u32,
        total_score: i64,
        plan: Option<Plan>,
        global_round: u32,
    ) -> PlayerView {
        let seat = record.seat(me).expect("viewer plays in the match");
        let opponent = record.players[1 - seat];
        let rounds = record
            .rounds
            .iter()
            .map(|r| ViewRound {
                own: r.actions[seat],
                opponent: r.actions[1 - seat],
                own_points: r.payoffs[seat],
                opponent_points: r.payoffs[1 - seat],
            })
            .collect();
        PlayerView {
            self_id: me,
            self_group: config.group_of(me),
            opponent: (!masked).then_some(opponent),
            opponent_group: if masked {
                None
            } else {
                config.group_of(opponent)
            },
            masked,
            match_id: record.match_id,
            rounds,
            remaining_budget,
            total_score,
            condition: config.condition,
            plan,
            global_round,
        }
    }

    pub fn opponent_label(&self) -> String {
        match self.opponent {
            Some(p) if !self.masked => p.to_string(),
            _ => "unknown".to_string(),
        }
    }

    pub fn opponent_group_label(&self) -> Option<String> {
        if self.masked {
            Some("unknown".to_string())
        } else {
            self.opponent_group.map(|g| g.to_string())
        }
    }

    pub fn last_opponent_action(&self) -> Option<Action> {
        self.rounds.last().map(|r| r.opponent)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub action: Action,
    pub end_match: bool,
    pub rationale: String,
    /// The model reply could not be parsed and the fallback was used.
    #[serde(default)]
    pub unparsed: bool,
}

impl Decision {
    pub fn play(action: Action) -> Decision {
        Decision {
            action,
            end_match: false,
            rationale: String::new(),
            unparsed: false,
        }
    }

    /// Used when a model never produced a readable move.
    pub fn fallback() -> Decision {
        Decision {
            action: Action::B,
            end_match: false,
            rationale: "unparsed reply".to_string(),
            unparsed: true,
        }
    }
}

/// A free-form strategy statement, never empty.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub text: String,
    /// Global round of the owning player when the plan was made.
    pub created_at_round: u32,
    #[serde(default)]
    pub unparsed: bool,
}

impl Plan {
    pub fn new(text: impl Into<String>, created_at_round: u32) -> Result<Plan, AgentError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(AgentError::EmptyPlan);
        }
        Ok(Plan {
            text,
            created_at_round,
            unparsed: false,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Critique {
    pub text: String,
    #[serde(default)]
    pub unparsed: bool,
}

/// Inputs of the planner and the critic.
#[derive(Clone, Copy, Debug)]
pub struct PlanRequest<'a> {
    pub player: PlayerId,
    /// The player's own matches, completed ones and the current one.
    pub history: &'a [MatchRecord],
    pub previous_plan: Option<&'a Plan>,
    pub critique: Option<&'a Critique>,
    pub global_round: u32,
    pub remaining_budget: u32,
    pub total_score: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaQuestionId {
    /// Does the opponent mostly play tit-for-tat?
    Strategy,
    /// Is the opponent forgiving?
    Behavior,
    /// Own total score in the match.
    OwnScore,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaQuestion {
    pub id: MetaQuestionId,
    pub text: String,
}

pub const STRATEGY_QUESTION: &str = "Does the opponent mostly follow a Tit For Tat strategy? (Will first cooperate, then subsequently replicate an opponent's previous action)";
pub const BEHAVIOR_QUESTION: &str =
    "Is the opponent forgiving? (Propensity to choose action_a again after an opponent\u{2019}s action_b)";
pub const OWN_SCORE_QUESTION: &str =
    "What is your total score in this match? (Answer with an integer)";

impl MetaQuestion {
    pub fn standard(id: MetaQuestionId) -> MetaQuestion {
        let text = match id {
            MetaQuestionId::Strategy => STRATEGY_QUESTION,
            MetaQuestionId::Behavior => BEHAVIOR_QUESTION,
            MetaQuestionId::OwnScore => OWN_SCORE_QUESTION,
        };
        MetaQuestion {
            id,
            text: text.to_string(),
        }
    }

    /// The questions asked after every match under `settings`.
    pub fn configured(settings: &crate::config::MetaSettings) -> Vec<MetaQuestion> {
        if !settings.enabled {
            return Vec::new();
        }
        let mut qs = vec![
            MetaQuestion::standard(MetaQuestionId::Strategy),
            MetaQuestion::standard(MetaQuestionId::Behavior),
        ];
        if settings.state_question {
            qs.push(MetaQuestion::standard(MetaQuestionId::OwnScore));
        }
        qs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetaValue {
    Bool(bool),
    Int(i64),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaAnswer {
    pub question: MetaQuestionId,
    pub value: MetaValue,
    #[serde(default)]
    pub unparsed: bool,
}

/// A player in the tournament.
///
/// Implementations keep per-player state; one call is in flight per agent at a time.
pub trait Agent: Send {
    fn decide(&mut self, view: &PlayerView) -> Result<Decision, AgentError>;

    fn make_plan(&mut self, request: &PlanRequest<'_>) -> Result<Plan, AgentError>;

    fn critique_plan(
        &mut self,
        plan: &Plan,
        request: &PlanRequest<'_>,
    ) -> Result<Critique, AgentError>;

    /// One answer per question about the completed `record`.
    fn answer_meta(
        &mut self,
        questions: &[MetaQuestion],
        record: &MatchRecord,
        view: &PlayerView,
    ) -> Result<Vec<MetaAnswer>, AgentError>;

    /// Whether calls go over the network (and should be dispatched in parallel).
    fn is_remote(&self) -> bool {
        false
    }

    /// Model exchanges recorded since the last drain, in call order.
    fn drain_exchanges(&mut self) -> Vec<ModelExchange> {
        Vec::new()
    }
}

/// Fresh agents for one trial.
///
/// Scripted randomness is seeded from `trial_seed` and the player id, so
/// every trial starts from a clean state.
pub fn build_agents(
    config: &TournamentConfig,
    trial_seed: u64,
    client: Option<&Arc<ModelClient>>,
    prompts: &Arc<PromptSet>,
    shared_config: &Arc<TournamentConfig>,
) -> Result<BTreeMap<PlayerId, Box<dyn Agent>>, AgentError> {
    let mut agents: BTreeMap<PlayerId, Box<dyn Agent>> = BTreeMap::new();
    for spec in &config.players {
        let agent: Box<dyn Agent> = match &spec.agent {
            AgentKind::Model => {
                let client = client.ok_or(ClientError::NotConfigured)?;
                Box::new(ModelAgent::new(
                    spec.id,
                    Arc::clone(client),
                    Arc::clone(prompts),
                    Arc::clone(shared_config),
                ))
            }
            kind => Box::new(ScriptedAgent::new(
                Strategy::from_kind(kind).expect("scripted kind"),
                spec.meta_answers,
                config.meta.clone(),
                trial_seed ^ (u64::from(spec.id.0) << 32) ^ 0x9e37_79b9,
            )),
        };
        agents.insert(spec.id, agent);
    }
    Ok(agents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::PayoffMatrix;

    #[test]
    fn view_masks_opponent() {
        let config = TournamentConfig::uniform(Condition::Sa, 2, 2, AgentKind::TitForTat, 10, 15);
        let mut record = MatchRecord::new(0, [PlayerId(0), PlayerId(2)], false);
        let masked = PlayerView::build(&config, &record, PlayerId(2), true, 15, 0, None, 1);
        assert_eq!(masked.opponent_label(), "unknown");
        assert_eq!(masked.opponent_group_label().as_deref(), Some("unknown"));
        assert_eq!(masked.self_group, Some(GroupId(1)));

        record.push_round([Action::A, Action::B], &PayoffMatrix::default());
        let open = PlayerView::build(&config, &record, PlayerId(2), false, 14, 5, None, 2);
        assert_eq!(open.opponent_label(), "0");
        assert_eq!(open.opponent_group, Some(GroupId(0)));
        assert_eq!(
            open.rounds,
            vec![ViewRound {
                own: Action::B,
                opponent: Action::A,
                own_points: 5,
                opponent_points: 0
            }]
        );
    }

    #[test]
    fn ri_view_has_no_groups() {
        let config = TournamentConfig::uniform(Condition::Ri, 2, 2, AgentKind::TitForTat, 10, 15);
        let record = MatchRecord::new(0, [PlayerId(0), PlayerId(2)], false);
        let view = PlayerView::build(&config, &record, PlayerId(0), false, 15, 0, None, 1);
        assert_eq!(view.self_group, None);
        assert_eq!(view.opponent_group_label(), None);
    }

    #[test]
    fn plan_must_not_be_empty() {
        assert!(matches!(Plan::new("  ", 1), Err(AgentError::EmptyPlan)));
        assert_eq!(Plan::new("mirror", 6).unwrap().created_at_round, 6);
    }

    #[test]
    fn configured_questions() {
        let mut settings = crate::config::MetaSettings::default();
        let qs = MetaQuestion::configured(&settings);
        assert_eq!(qs.len(), 2);
        assert_eq!(qs[0].text, STRATEGY_QUESTION);
        settings.state_question = true;
        assert_eq!(MetaQuestion::configured(&settings).len(), 3);
        settings.enabled = false;
        assert!(MetaQuestion::configured(&settings).is_empty());
    }
}
