//! Prompt rendering and reply parsing.
//!
//! Every prompt is assembled from editable template files. The defaults are
//! compiled in; a template directory can replace any of them by file name.
//! Move, plan and critique prompts must stay free of loaded vocabulary, and
//! every prompt lays out its sections in a fixed order.

mod parse;

use std::fmt::Write as _;
use std::path::Path;

use minijinja::{context, Environment};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{MetaQuestion, Plan, PlanRequest, PlayerView, ViewRound};
use crate::config::TournamentConfig;
use crate::game::{MatchRecord, PlayerId};

pub use parse::{parse_meta_reply, parse_reply, MalformedReply, ParsedReply};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template error: {0}")]
    Template(String),
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("template {kind:?} is missing section {missing:?} or has sections out of order")]
    Sections {
        kind: PromptKind,
        missing: SectionLabel,
    },
    #[error("meta prompt needs at least one question")]
    NoQuestions,
}

impl From<minijinja::Error> for PromptError {
    fn from(e: minijinja::Error) -> Self {
        PromptError::Template(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Move,
    Plan,
    Critique,
    Meta,
}

impl PromptKind {
    fn template(self) -> &'static str {
        match self {
            PromptKind::Move => "move.txt",
            PromptKind::Plan => "plan.txt",
            PromptKind::Critique => "critique.txt",
            PromptKind::Meta => "meta.txt",
        }
    }

    fn sections(self) -> &'static [SectionLabel] {
        use SectionLabel::*;
        match self {
            PromptKind::Meta => &[Rules, Identity, History, OutputInstructions],
            _ => &[Rules, Identity, History, PreviousPlan, OutputInstructions],
        }
    }

    /// Whether the neutral-vocabulary rule applies.
    pub fn is_neutral(self) -> bool {
        self != PromptKind::Meta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionLabel {
    Rules,
    Identity,
    History,
    PreviousPlan,
    OutputInstructions,
}

impl SectionLabel {
    pub fn header(self) -> &'static str {
        match self {
            SectionLabel::Rules => "Game Rules:",
            SectionLabel::Identity => "Player Information:",
            SectionLabel::History => "Match History:",
            SectionLabel::PreviousPlan => "Previous Plan:",
            SectionLabel::OutputInstructions => "Output Instructions:",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub kind: PromptKind,
    pub text: String,
    pub sections: Vec<SectionLabel>,
}

const DEFAULT_TEMPLATES: &[(&str, &str)] = &[
    ("rules.txt", include_str!("../../templates/rules.txt")),
    ("goal_ri.txt", include_str!("../../templates/goal_ri.txt")),
    ("goal_gc.txt", include_str!("../../templates/goal_gc.txt")),
    ("goal_sa.txt", include_str!("../../templates/goal_sa.txt")),
    ("move.txt", include_str!("../../templates/move.txt")),
    ("plan.txt", include_str!("../../templates/plan.txt")),
    ("critique.txt", include_str!("../../templates/critique.txt")),
    ("meta.txt", include_str!("../../templates/meta.txt")),
];

/// Words that must never reach the agents during play.
const LOADED_TERMS: [&str; 2] = ["cooperat", "defect"];

/// True if `text` mentions cooperation or defection in any casing.
pub fn has_loaded_terms(text: &str) -> bool {
    let lower = text.to_lowercase();
    LOADED_TERMS.iter().any(|t| lower.contains(t))
}

fn points(value: i64) -> String {
    if value == 1 || value == -1 {
        format!("{value} point")
    } else {
        format!("{value} points")
    }
}

/// The loaded template set.
pub struct PromptSet {
    env: Environment<'static>,
}

impl std::fmt::Debug for PromptSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PromptSet").finish_non_exhaustive()
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet::load(None).expect("built-in templates compile")
    }
}

impl PromptSet {
    /// Built-in templates, with any same-named file in `dir` taking precedence.
    pub fn load(dir: Option<&Path>) -> Result<PromptSet, PromptError> {
        let mut env = Environment::new();
        env.set_undefined_behavior(minijinja::UndefinedBehavior::Strict);
        env.add_filter("points", points);
        for (name, source) in DEFAULT_TEMPLATES {
            let text = match dir.map(|d| d.join(name)) {
                Some(path) if path.exists() => {
                    std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                        path: path.display().to_string(),
                        source,
                    })?
                }
                _ => (*source).to_string(),
            };
            env.add_template_owned(*name, text)?;
        }
        Ok(PromptSet { env })
    }

    fn render(
        &self,
        kind: PromptKind,
        ctx: minijinja::Value,
    ) -> Result<RenderedPrompt, PromptError> {
        let mut text = self.env.get_template(kind.template())?.render(ctx)?;
        if !text.ends_with('\n') {
            text.push('\n');
        }
        let sections = locate_sections(kind, &text)?;
        Ok(RenderedPrompt {
            kind,
            text,
            sections,
        })
    }

    fn rules_context(config: &TournamentConfig, remaining_budget: u32) -> minijinja::Value {
        let m = &config.matrix;
        context! {
            matrix => context! {
                aa => m.reward_aa,
                bb => m.reward_bb,
                temptation => m.temptation(),
                sucker => m.sucker(),
            },
            max_rounds => config.max_rounds,
            show_budget => config.show_budget,
            budget => config.budget,
            remaining_budget => remaining_budget,
            condition => config.condition.key(),
        }
    }

    pub fn render_move_prompt(
        &self,
        view: &PlayerView,
        config: &TournamentConfig,
    ) -> Result<RenderedPrompt, PromptError> {
        let history = if view.rounds.is_empty() {
            String::new()
        } else {
            match_block(
                view.self_id,
                &view.opponent_label(),
                view.rounds.iter().copied(),
            )
        };
        let ctx = context! {
            ..Self::rules_context(config, view.remaining_budget),
            ..context! {
                self_id => view.self_id.0,
                self_group => view.self_group.map(|g| g.0),
                opponent => view.opponent_label(),
                opponent_group => view.opponent_group_label(),
                total_score => view.total_score,
                history => history.trim_end(),
                plan => view.plan.as_ref().map(|p| p.text.clone()),
            }
        };
        self.render(PromptKind::Move, ctx)
    }

    fn planning_context(request: &PlanRequest<'_>, config: &TournamentConfig) -> minijinja::Value {
        let me = request.player;
        let group = config.group_of(me);
        let members: Vec<String> = match group {
            Some(g) => config
                .players
                .iter()
                .filter(|p| p.group == Some(g))
                .map(|p| format!("Player {}", p.id))
                .collect(),
            None => Vec::new(),
        };
        context! {
            ..Self::rules_context(config, request.remaining_budget),
            ..context! {
                self_id => me.0,
                self_group => group.map(|g| g.0),
                group_members => members,
                total_score => request.total_score,
                history => render_history_lines(request.history, me).trim_end(),
            }
        }
    }

    /// Planner prompt: full own history, the previous plan and any critique of it.
    pub fn render_plan_prompt(
        &self,
        request: &PlanRequest<'_>,
        config: &TournamentConfig,
    ) -> Result<RenderedPrompt, PromptError> {
        let ctx = context! {
            ..Self::planning_context(request, config),
            ..context! {
                plan => request.previous_plan.map(|p| p.text.clone()),
                critique => request.critique.map(|c| c.text.clone()),
            }
        };
        self.render(PromptKind::Plan, ctx)
    }

    pub fn render_critique_prompt(
        &self,
        plan: &Plan,
        request: &PlanRequest<'_>,
        config: &TournamentConfig,
    ) -> Result<RenderedPrompt, PromptError> {
        let ctx = context! {
            ..Self::planning_context(request, config),
            ..context! { plan => plan.text.clone() }
        };
        self.render(PromptKind::Critique, ctx)
    }

    /// Post-match questions about the completed `record`.
    pub fn render_meta_prompt(
        &self,
        record: &MatchRecord,
        perspective: PlayerId,
        questions: &[MetaQuestion],
        config: &TournamentConfig,
        remaining_budget: u32,
    ) -> Result<RenderedPrompt, PromptError> {
        if questions.is_empty() {
            return Err(PromptError::NoQuestions);
        }
        let opponent = record
            .opponent_of(perspective)
            .expect("perspective plays in the match");
        let texts: Vec<String> = questions.iter().map(|q| q.text.clone()).collect();
        let ctx = context! {
            ..Self::rules_context(config, remaining_budget),
            ..context! {
                self_id => perspective.0,
                self_group => config.group_of(perspective).map(|g| g.0),
                opponent => opponent.0,
                opponent_group => config.group_of(opponent).map(|g| g.0),
                history => render_history_lines(std::slice::from_ref(record), perspective).trim_end(),
                questions => texts,
            }
        };
        self.render(PromptKind::Meta, ctx)
    }
}

fn locate_sections(kind: PromptKind, text: &str) -> Result<Vec<SectionLabel>, PromptError> {
    let mut from = 0;
    for &label in kind.sections() {
        let found = text[from..]
            .lines()
            .scan(from, |offset, line| {
                let start = *offset;
                *offset += line.len() + 1;
                Some((start, line))
            })
            .find(|(_, line)| line.trim_end() == label.header());
        match found {
            Some((start, line)) => from = start + line.len(),
            None => {
                return Err(PromptError::Sections {
                    kind,
                    missing: label,
                })
            }
        }
    }
    Ok(kind.sections().to_vec())
}

fn match_block(me: PlayerId, opponent: &str, rounds: impl Iterator<Item = ViewRound>) -> String {
    let mut out = format!("Results of match between player {me} and player {opponent}:\n");
    for (i, r) in rounds.enumerate() {
        let _ = writeln!(
            out,
            "Round {}: You chose {}, opponent chose {}. Score: {:+} for you, {:+} for opponent",
            i + 1,
            r.own.token(),
            r.opponent.token(),
            r.own_points,
            r.opponent_points,
        );
    }
    out
}

/// Round-by-round text of every match in `records` that `perspective` played.
///
/// Matches without rounds and matches of other players are left out.
pub fn render_history_lines(records: &[MatchRecord], perspective: PlayerId) -> String {
    let mut blocks = Vec::new();
    for record in records {
        let Some(seat) = record.seat(perspective) else {
            continue;
        };
        if record.rounds.is_empty() {
            continue;
        }
        let rounds = record.rounds.iter().map(|r| ViewRound {
            own: r.actions[seat],
            opponent: r.actions[1 - seat],
            own_points: r.payoffs[seat],
            opponent_points: r.payoffs[1 - seat],
        });
        blocks.push(match_block(
            perspective,
            &record.players[1 - seat].to_string(),
            rounds,
        ));
    }
    blocks.join("\n")
}
