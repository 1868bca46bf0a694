use std::sync::Arc;

use super::{
    Agent, AgentError, Critique, Decision, MetaAnswer, MetaQuestion, MetaValue, Plan, PlanRequest,
    PlayerView,
};
use crate::client::{ClientError, ModelClient, ModelExchange};
use crate::config::TournamentConfig;
use crate::game::{MatchRecord, PlayerId};
use crate::prompt::{parse_meta_reply, parse_reply, ParsedReply, PromptKind, PromptSet};

/// Agent driven by a chat-completion model through the prompt templates.
///
/// Replies that stay unreadable after all retries fall back instead of
/// failing: moves become action B, plans keep the previous plan, and meta
/// answers are flagged so they are left out of scoring.
pub struct ModelAgent {
    id: PlayerId,
    client: Arc<ModelClient>,
    prompts: Arc<PromptSet>,
    config: Arc<TournamentConfig>,
    exchanges: Vec<ModelExchange>,
}

const FALLBACK_PLAN: &str = "Choose each action from the history of the current match.";
const FALLBACK_FEEDBACK: &str = "No usable feedback.";

impl ModelAgent {
    pub fn new(
        id: PlayerId,
        client: Arc<ModelClient>,
        prompts: Arc<PromptSet>,
        config: Arc<TournamentConfig>,
    ) -> Self {
        ModelAgent {
            id,
            client,
            prompts,
            config,
            exchanges: Vec::new(),
        }
    }

    pub fn id(&self) -> PlayerId {
        self.id
    }
}

impl Agent for ModelAgent {
    fn decide(&mut self, view: &PlayerView) -> Result<Decision, AgentError> {
        let prompt = self.prompts.render_move_prompt(view, &self.config)?;
        let reply = self
            .client
            .complete_with(&prompt, &mut self.exchanges, |raw| {
                parse_reply(PromptKind::Move, raw)
            });
        match reply {
            Ok(ParsedReply::Move {
                action,
                end_match,
                rationale,
            }) => Ok(Decision {
                action,
                end_match,
                rationale,
                unparsed: false,
            }),
            Ok(_) => unreachable!("move parse yields a move"),
            Err(ClientError::Malformed { .. }) => Ok(Decision::fallback()),
            Err(e) => Err(e.into()),
        }
    }

    fn make_plan(&mut self, request: &PlanRequest<'_>) -> Result<Plan, AgentError> {
        let prompt = self.prompts.render_plan_prompt(request, &self.config)?;
        let reply = self
            .client
            .complete_with(&prompt, &mut self.exchanges, |raw| {
                parse_reply(PromptKind::Plan, raw)
            });
        match reply {
            Ok(ParsedReply::Plan { plan_text }) => Plan::new(plan_text, request.global_round),
            Ok(_) => unreachable!("plan parse yields a plan"),
            Err(ClientError::Malformed { .. }) => {
                let text = request
                    .previous_plan
                    .map(|p| p.text.clone())
                    .unwrap_or_else(|| FALLBACK_PLAN.to_string());
                let mut plan = Plan::new(text, request.global_round)?;
                plan.unparsed = true;
                Ok(plan)
            }
            Err(e) => Err(e.into()),
        }
    }

    fn critique_plan(
        &mut self,
        plan: &Plan,
        request: &PlanRequest<'_>,
    ) -> Result<Critique, AgentError> {
        if plan.text.trim().is_empty() {
            return Err(AgentError::EmptyPlan);
        }
        let prompt = self
            .prompts
            .render_critique_prompt(plan, request, &self.config)?;
        let reply = self
            .client
            .complete_with(&prompt, &mut self.exchanges, |raw| {
                parse_reply(PromptKind::Critique, raw)
            });
        match reply {
            Ok(ParsedReply::Critique { feedback_text }) => Ok(Critique {
                text: feedback_text,
                unparsed: false,
            }),
            Ok(_) => unreachable!("critique parse yields a critique"),
            Err(ClientError::Malformed { .. }) => Ok(Critique {
                text: FALLBACK_FEEDBACK.to_string(),
                unparsed: true,
            }),
            Err(e) => Err(e.into()),
        }
    }

    fn answer_meta(
        &mut self,
        questions: &[MetaQuestion],
        record: &MatchRecord,
        view: &PlayerView,
    ) -> Result<Vec<MetaAnswer>, AgentError> {
        if questions.is_empty() {
            return Err(AgentError::NoQuestions);
        }
        let prompt = self.prompts.render_meta_prompt(
            record,
            self.id,
            questions,
            &self.config,
            view.remaining_budget,
        )?;
        let reply = self
            .client
            .complete_with(&prompt, &mut self.exchanges, |raw| {
                parse_meta_reply(raw, questions)
            });
        match reply {
            Ok(values) => Ok(questions
                .iter()
                .zip(values)
                .map(|(q, value)| MetaAnswer {
                    question: q.id,
                    value,
                    unparsed: false,
                })
                .collect()),
            Err(ClientError::Malformed { .. }) => Ok(questions
                .iter()
                .map(|q| MetaAnswer {
                    question: q.id,
                    value: MetaValue::Bool(false),
                    unparsed: true,
                })
                .collect()),
            Err(e) => Err(e.into()),
        }
    }

    fn is_remote(&self) -> bool {
        true
    }

    fn drain_exchanges(&mut self) -> Vec<ModelExchange> {
        std::mem::take(&mut self.exchanges)
    }
}
