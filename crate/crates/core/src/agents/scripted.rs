use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    Agent, AgentError, Critique, Decision, MetaAnswer, MetaQuestion, MetaQuestionId, MetaValue,
    Plan, PlanRequest, PlayerView,
};
use crate::config::{AgentKind, MetaAnswerMode, MetaSettings};
use crate::game::{Action, MatchRecord};
use crate::metrics::meta_ground_truth;

/// Classic fixed strategies used as verification oracles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strategy {
    AlwaysCooperate,
    AlwaysDefect,
    TitForTat,
    GrimTrigger,
    Random { p: f64 },
    ExitAfterRound { round: u32 },
}

impl Strategy {
    pub fn from_kind(kind: &AgentKind) -> Option<Strategy> {
        Some(match *kind {
            AgentKind::AlwaysCooperate => Strategy::AlwaysCooperate,
            AgentKind::AlwaysDefect => Strategy::AlwaysDefect,
            AgentKind::TitForTat => Strategy::TitForTat,
            AgentKind::GrimTrigger => Strategy::GrimTrigger,
            AgentKind::Random { p } => Strategy::Random { p },
            AgentKind::ExitAfterRound { round } => Strategy::ExitAfterRound { round },
            AgentKind::Model => return None,
        })
    }

    pub fn stub_plan(self) -> &'static str {
        match self {
            Strategy::AlwaysCooperate => "always play action_a",
            Strategy::AlwaysDefect => "always play action_b",
            Strategy::TitForTat => "mirror opponent",
            Strategy::GrimTrigger => {
                "play action_a until the opponent plays action_b, then action_b"
            }
            Strategy::Random { .. } => "play at random",
            Strategy::ExitAfterRound { .. } => "play action_a and leave early",
        }
    }
}

pub struct ScriptedAgent {
    strategy: Strategy,
    meta_mode: MetaAnswerMode,
    meta: MetaSettings,
    rng: ChaCha8Rng,
}

impl ScriptedAgent {
    pub fn new(
        strategy: Strategy,
        meta_mode: MetaAnswerMode,
        meta: MetaSettings,
        seed: u64,
    ) -> Self {
        ScriptedAgent {
            strategy,
            meta_mode,
            meta,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }
}

impl Agent for ScriptedAgent {
    fn decide(&mut self, view: &PlayerView) -> Result<Decision, AgentError> {
        let decision = match self.strategy {
            Strategy::AlwaysCooperate => Decision::play(Action::A),
            Strategy::AlwaysDefect => Decision::play(Action::B),
            Strategy::TitForTat => Decision::play(view.last_opponent_action().unwrap_or(Action::A)),
            Strategy::GrimTrigger => {
                let triggered = view.rounds.iter().any(|r| r.opponent == Action::B);
                Decision::play(if triggered { Action::B } else { Action::A })
            }
            Strategy::Random { p } => Decision::play(if self.rng.random_bool(p) {
                Action::A
            } else {
                Action::B
            }),
            Strategy::ExitAfterRound { round } => {
                let mut d = Decision::play(Action::A);
                // the round being decided is rounds.len() + 1
                d.end_match = view.rounds.len() as u32 + 1 >= round;
                d
            }
        };
        Ok(decision)
    }

    fn make_plan(&mut self, request: &PlanRequest<'_>) -> Result<Plan, AgentError> {
        Plan::new(self.strategy.stub_plan(), request.global_round)
    }

    fn critique_plan(
        &mut self,
        plan: &Plan,
        _request: &PlanRequest<'_>,
    ) -> Result<Critique, AgentError> {
        if plan.text.trim().is_empty() {
            return Err(AgentError::EmptyPlan);
        }
        Ok(Critique {
            text: "keep the plan".to_string(),
            unparsed: false,
        })
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
        let truth = meta_ground_truth(record, view.self_id, &self.meta);
        let invert = self.meta_mode == MetaAnswerMode::Inverted;
        Ok(questions
            .iter()
            .map(|q| {
                let value = match q.id {
                    MetaQuestionId::Strategy => {
                        MetaValue::Bool(truth.strategy.unwrap_or(false) != invert)
                    }
                    MetaQuestionId::Behavior => {
                        MetaValue::Bool(truth.behavior.unwrap_or(false) != invert)
                    }
                    MetaQuestionId::OwnScore => MetaValue::Int(truth.own_score + i64::from(invert)),
                };
                MetaAnswer {
                    question: q.id,
                    value,
                    unparsed: false,
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ViewRound;
    use crate::config::Condition;
    use crate::game::{PayoffMatrix, PlayerId};
    use Action::{A, B};

    fn view(history: &[(Action, Action)]) -> PlayerView {
        PlayerView {
            self_id: PlayerId(0),
            self_group: None,
            opponent: Some(PlayerId(1)),
            opponent_group: None,
            masked: false,
            match_id: 0,
            rounds: history
                .iter()
                .map(|&(own, opponent)| ViewRound {
                    own,
                    opponent,
                    own_points: 0,
                    opponent_points: 0,
                })
                .collect(),
            remaining_budget: 10,
            total_score: 0,
            condition: Condition::Ri,
            plan: None,
            global_round: history.len() as u32 + 1,
        }
    }

    fn agent(strategy: Strategy) -> ScriptedAgent {
        ScriptedAgent::new(strategy, MetaAnswerMode::Oracle, MetaSettings::default(), 1)
    }

    #[test]
    fn tit_for_tat() {
        let mut tft = agent(Strategy::TitForTat);
        assert_eq!(tft.decide(&view(&[])).unwrap().action, A);
        assert_eq!(tft.decide(&view(&[(A, B)])).unwrap().action, B);
        assert_eq!(tft.decide(&view(&[(A, B), (B, A)])).unwrap().action, A);
    }

    #[test]
    fn grim_trigger_never_forgives() {
        let mut grim = agent(Strategy::GrimTrigger);
        assert_eq!(grim.decide(&view(&[(A, A)])).unwrap().action, A);
        assert_eq!(grim.decide(&view(&[(A, B)])).unwrap().action, B);
        assert_eq!(
            grim.decide(&view(&[(A, B), (B, A), (B, A)]))
                .unwrap()
                .action,
            B
        );
    }

    #[test]
    fn always_defect_never_exits() {
        let mut ad = agent(Strategy::AlwaysDefect);
        for h in [vec![], vec![(B, A)], vec![(B, B); 7]] {
            let d = ad.decide(&view(&h)).unwrap();
            assert_eq!(d.action, B);
            assert!(!d.end_match);
        }
    }

    #[test]
    fn exit_after_round() {
        let mut exit = agent(Strategy::ExitAfterRound { round: 2 });
        assert!(!exit.decide(&view(&[])).unwrap().end_match);
        let d = exit.decide(&view(&[(A, A)])).unwrap();
        assert!(d.end_match);
        assert_eq!(d.action, A);
    }

    #[test]
    fn random_is_seed_deterministic() {
        let run = |seed| {
            let mut r = ScriptedAgent::new(
                Strategy::Random { p: 0.5 },
                MetaAnswerMode::Oracle,
                MetaSettings::default(),
                seed,
            );
            (0..32)
                .map(|_| r.decide(&view(&[])).unwrap().action)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
        let mut never = agent(Strategy::Random { p: 0.0 });
        assert!((0..20).all(|_| never.decide(&view(&[])).unwrap().action == B));
    }

    #[test]
    fn stub_plans() {
        let mut tft = agent(Strategy::TitForTat);
        let req = PlanRequest {
            player: PlayerId(0),
            history: &[],
            previous_plan: None,
            critique: None,
            global_round: 1,
            remaining_budget: 10,
            total_score: 0,
        };
        let plan = tft.make_plan(&req).unwrap();
        assert_eq!(plan.text, "mirror opponent");
        assert!(!tft.critique_plan(&plan, &req).unwrap().text.is_empty());
        let empty = Plan {
            text: String::new(),
            created_at_round: 1,
            unparsed: false,
        };
        assert!(matches!(
            tft.critique_plan(&empty, &req),
            Err(AgentError::EmptyPlan)
        ));
    }

    fn played(me: [Action; 4], opp: [Action; 4]) -> MatchRecord {
        let mut record = MatchRecord::new(0, [PlayerId(0), PlayerId(1)], false);
        for (a, b) in me.into_iter().zip(opp) {
            record.push_round([a, b], &PayoffMatrix::default());
        }
        record.end_reason = Some(crate::game::EndReason::RoundLimit);
        record
    }

    #[test]
    fn oracle_and_inverted_meta() {
        // opponent plays TFT against our A, B, A, A
        let record = played([A, B, A, A], [A, A, B, A]);
        let questions = MetaQuestion::configured(&MetaSettings {
            state_question: true,
            ..MetaSettings::default()
        });
        let v = view(&[]);
        let oracle = agent(Strategy::TitForTat)
            .answer_meta(&questions, &record, &v)
            .unwrap();
        assert_eq!(oracle[0].value, MetaValue::Bool(true));
        // one opportunity (after our B), opponent answered B: not forgiving
        assert_eq!(oracle[1].value, MetaValue::Bool(false));
        assert_eq!(oracle[2].value, MetaValue::Int(11));

        let mut inv = ScriptedAgent::new(
            Strategy::TitForTat,
            MetaAnswerMode::Inverted,
            MetaSettings::default(),
            0,
        );
        let inverted = inv.answer_meta(&questions, &record, &v).unwrap();
        assert_eq!(inverted[0].value, MetaValue::Bool(false));
        assert_eq!(inverted[1].value, MetaValue::Bool(true));
        assert_eq!(inverted[2].value, MetaValue::Int(12));
        assert!(matches!(
            inv.answer_meta(&[], &record, &v),
            Err(AgentError::NoQuestions)
        ));
    }
}
