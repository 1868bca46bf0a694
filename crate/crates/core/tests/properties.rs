mod support;

use proptest::prelude::*;
use supercoop::agents::{Plan, PlayerView};
use supercoop::game::MatchRecord;
use supercoop::mock::MOCK_PLAN;
use supercoop::prompt::{has_loaded_terms, PromptSet};
use supercoop::schedule::validate_budget;
use support::{
    headers, random_config, random_state, request, round_lines, run_scripted, view, MASKED_LINE,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn prompts_use_neutral_vocabulary(seed in any::<u64>()) {
        let prompts = PromptSet::default();
        let s = random_state(seed);
        let mut all = s.history.clone();
        all.push(s.current.clone());
        let req = request(&s, &all);
        let move_prompt = prompts.render_move_prompt(&view(&s), &s.config).unwrap();
        let plan_prompt = prompts.render_plan_prompt(&req, &s.config).unwrap();
        let draft = s.plan.clone().unwrap_or_else(|| Plan::new(MOCK_PLAN, 1).unwrap());
        let critique_prompt = prompts.render_critique_prompt(&draft, &req, &s.config).unwrap();
        for p in [&move_prompt, &plan_prompt, &critique_prompt] {
            prop_assert!(!has_loaded_terms(&p.text), "{}", p.text);
        }
        prop_assert_eq!(move_prompt.text.contains(MASKED_LINE), s.masked);
    }

    #[test]
    fn prompts_only_show_own_rounds(seed in any::<u64>()) {
        let prompts = PromptSet::default();
        let s = random_state(seed);
        let mut all = s.history.clone();
        all.push(s.current.clone());
        let own_rounds: usize = all
            .iter()
            .filter(|m| m.involves(s.me))
            .map(|m| m.rounds.len())
            .sum();

        let move_prompt = prompts.render_move_prompt(&view(&s), &s.config).unwrap().text;
        prop_assert_eq!(round_lines(&move_prompt), s.current.rounds.len());

        let req = request(&s, &all);
        for text in [
            prompts.render_plan_prompt(&req, &s.config).unwrap().text,
            prompts.render_critique_prompt(&Plan::new(MOCK_PLAN, 1).unwrap(), &req, &s.config).unwrap().text,
        ] {
            prop_assert_eq!(round_lines(&text), own_rounds);
            let me = format!("Results of match between player {} and player ", s.me);
            for h in headers(&text) {
                prop_assert!(h.starts_with(&me), "foreign match header {h}");
            }
        }
    }
}

#[test]
fn budgets_hold_over_random_tournaments() {
    for seed in 0..100 {
        let config = random_config(seed);
        assert!(validate_budget(&config).is_ok());
        let (state, _) = run_scripted(&config);
        for (p, ps) in &state.players {
            let played: u32 = state
                .completed_matches
                .iter()
                .filter(|m| m.involves(*p))
                .map(|m| m.len())
                .sum();
            assert!(
                played <= config.budget,
                "seed {seed}: player {p} played {played}"
            );
            assert_eq!(ps.remaining_budget, config.budget - played);
        }
        for m in &state.completed_matches {
            assert!(m.len() <= config.max_rounds);
        }
    }
}

#[test]
fn masked_line_on_every_first_round() {
    // masking is a function of the view, so rebuilding the round-1 view is enough
    for seed in 0..20 {
        let config = random_config(seed);
        let (state, _) = run_scripted(&config);
        let prompts = PromptSet::default();
        let mut seen = std::collections::BTreeSet::new();
        for m in &state.completed_matches {
            if m.is_empty() {
                continue;
            }
            for (seat, p) in m.players.iter().enumerate() {
                let opponent = m.players[1 - seat];
                let first = MatchRecord::new(m.match_id, m.players, m.intra_group);
                let masked = m.rounds[0].opponent_masked[seat];
                assert_eq!(masked, !seen.contains(&(*p, opponent)));
                let view = PlayerView::build(&config, &first, *p, masked, 1, 0, None, 1);
                let text = prompts.render_move_prompt(&view, &config).unwrap().text;
                assert_eq!(text.contains(MASKED_LINE), masked);
            }
            seen.insert((m.players[0], m.players[1]));
            seen.insert((m.players[1], m.players[0]));
        }
    }
}
