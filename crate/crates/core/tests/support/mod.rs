#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use supercoop::agents::{build_agents, Critique, Plan, PlanRequest, PlayerView, Strategy};
use supercoop::config::{AgentKind, Condition, TournamentConfig};
use supercoop::game::{Action, MatchRecord, PlayerId};
use supercoop::log::{Event, EventLog};
use supercoop::mock::{MOCK_FEEDBACK, MOCK_PLAN};
use supercoop::prompt::PromptSet;
use supercoop::tournament::{run_trial, TournamentState};

pub fn random_kind(rng: &mut impl Rng) -> AgentKind {
    match rng.random_range(0..6) {
        0 => AgentKind::AlwaysCooperate,
        1 => AgentKind::AlwaysDefect,
        2 => AgentKind::TitForTat,
        3 => AgentKind::GrimTrigger,
        4 => AgentKind::Random {
            p: rng.random_range(0.0..1.0),
        },
        _ => AgentKind::ExitAfterRound {
            round: rng.random_range(1..8),
        },
    }
}

/// A tournament of random scripted players under a random condition.
pub fn random_config(seed: u64) -> TournamentConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let condition = Condition::ALL[rng.random_range(0..3)];
    let groups = rng.random_range(2..4);
    let per_group = rng.random_range(1..4);
    let mut config =
        TournamentConfig::uniform(condition, groups, per_group, AgentKind::TitForTat, 1, 0);
    for p in &mut config.players {
        p.agent = random_kind(&mut rng);
    }
    let m = match condition {
        Condition::Gc => (groups - 1) * per_group,
        _ => groups * per_group - 1,
    };
    config.max_rounds = rng.random_range(1..12);
    // anywhere from tight to nearly unconstrained
    config.budget = rng.random_range(0..config.max_rounds * m);
    config.seed = seed;
    config
}

pub fn run_scripted(config: &TournamentConfig) -> (TournamentState, Vec<Event>) {
    let prompts = Arc::new(PromptSet::default());
    let shared = Arc::new(config.clone());
    let agents = build_agents(config, config.seed, None, &prompts, &shared).unwrap();
    let mut log = EventLog::in_memory();
    let state = run_trial(config, 0, agents, &mut log).unwrap();
    (state, log.into_events())
}

pub fn tft_vs_ad() -> TournamentConfig {
    let mut config = TournamentConfig::uniform(Condition::Ri, 1, 2, AgentKind::TitForTat, 10, 10);
    config.players[0].group = None;
    config.players[1].group = None;
    config.players[1].agent = AgentKind::AlwaysDefect;
    config
}

pub const MASKED_LINE: &str = "Your opponent is Player unknown from Group unknown";

pub struct GameState {
    pub config: TournamentConfig,
    pub me: PlayerId,
    /// Every match of the trial so far, including other players' matches.
    pub history: Vec<MatchRecord>,
    pub current: MatchRecord,
    pub masked: bool,
    pub plan: Option<Plan>,
    pub critique: Option<Critique>,
}

pub fn random_action(rng: &mut impl Rng) -> Action {
    if rng.random_bool(0.5) {
        Action::A
    } else {
        Action::B
    }
}

pub fn random_record(
    rng: &mut impl Rng,
    id: u32,
    players: [PlayerId; 2],
    config: &TournamentConfig,
) -> MatchRecord {
    let mut r = MatchRecord::new(id, players, config.same_group(players[0], players[1]));
    for _ in 0..rng.random_range(0..=config.max_rounds) {
        r.push_round([random_action(rng), random_action(rng)], &config.matrix);
    }
    r
}

pub fn random_state(seed: u64) -> GameState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let condition = Condition::ALL[rng.random_range(0..3)];
    let per_group = rng.random_range(1..4);
    let mut config =
        TournamentConfig::uniform(condition, 2, per_group, AgentKind::TitForTat, 10, 0);
    config.max_rounds = rng.random_range(1..12);
    config.show_budget = rng.random_bool(0.5);
    config.budget = rng.random_range(0..60);
    let ids = config.player_ids();
    let pick = |rng: &mut ChaCha8Rng| ids[rng.random_range(0..ids.len())];
    let me = pick(&mut rng);
    let mut history = Vec::new();
    for id in 0..rng.random_range(0..8) {
        let a = pick(&mut rng);
        let mut b = pick(&mut rng);
        while b == a {
            b = pick(&mut rng);
        }
        history.push(random_record(&mut rng, id, [a, b], &config));
    }
    let mut opponent = pick(&mut rng);
    while opponent == me {
        opponent = pick(&mut rng);
    }
    let current = random_record(&mut rng, 99, [me, opponent], &config);
    let masked = current.is_empty() && rng.random_bool(0.5);
    let stubs = [
        MOCK_PLAN.to_string(),
        Strategy::TitForTat.stub_plan().to_string(),
        Strategy::AlwaysDefect.stub_plan().to_string(),
    ];
    let plan = rng
        .random_bool(0.7)
        .then(|| Plan::new(stubs[rng.random_range(0..stubs.len())].clone(), 1).unwrap());
    let critique = rng.random_bool(0.5).then(|| Critique {
        text: MOCK_FEEDBACK.to_string(),
        unparsed: false,
    });
    GameState {
        config,
        me,
        history,
        current,
        masked,
        plan,
        critique,
    }
}

pub fn view(s: &GameState) -> PlayerView {
    PlayerView::build(
        &s.config,
        &s.current,
        s.me,
        s.masked,
        7,
        12,
        s.plan.clone(),
        3,
    )
}

pub fn request<'a>(s: &'a GameState, history: &'a [MatchRecord]) -> PlanRequest<'a> {
    PlanRequest {
        player: s.me,
        history,
        previous_plan: s.plan.as_ref(),
        critique: s.critique.as_ref(),
        global_round: 3,
        remaining_budget: 7,
        total_score: 12,
    }
}

pub fn round_lines(text: &str) -> usize {
    text.lines().filter(|l| l.starts_with("Round ")).count()
}

pub fn headers(text: &str) -> Vec<&str> {
    text.lines()
        .filter(|l| l.starts_with("Results of match between"))
        .collect()
}

/// Per player: (all actions, first actions, intra actions, inter actions), as "A"/"B" strings.
pub type Recount = BTreeMap<u64, [Vec<String>; 4]>;

// Reads the raw JSON lines without the crate's event types.
pub fn recount(lines: &[String]) -> Recount {
    let mut out: Recount = BTreeMap::new();
    let mut players: BTreeMap<u64, ([u64; 2], bool)> = BTreeMap::new();
    let mut round_of: BTreeMap<u64, u64> = BTreeMap::new();
    for line in lines {
        let v: Value = serde_json::from_str(line).unwrap();
        let payload = &v["payload"];
        match v["kind"].as_str().unwrap() {
            "trial_start" => {
                for p in payload["config"]["players"].as_array().unwrap() {
                    out.entry(p["id"].as_u64().unwrap()).or_default();
                }
            }
            "match_start" => {
                let ps = payload["players"].as_array().unwrap();
                players.insert(
                    payload["match_id"].as_u64().unwrap(),
                    (
                        [ps[0].as_u64().unwrap(), ps[1].as_u64().unwrap()],
                        payload["intra_group"].as_bool().unwrap(),
                    ),
                );
            }
            "move_pair" => {
                let id = payload["match_id"].as_u64().unwrap();
                let (ps, intra) = players[&id];
                let round = payload["round"].as_u64().unwrap();
                let last = round_of.insert(id, round).unwrap_or(0);
                assert_eq!(round, last + 1);
                for seat in 0..2 {
                    let a = payload["actions"][seat].as_str().unwrap().to_string();
                    assert!(a == "A" || a == "B");
                    let entry = out.get_mut(&ps[seat]).unwrap();
                    entry[0].push(a.clone());
                    if round == 1 {
                        entry[1].push(a.clone());
                    }
                    entry[if intra { 2 } else { 3 }].push(a);
                }
            }
            _ => {}
        }
    }
    out
}

pub fn rate(actions: &[String]) -> Option<f64> {
    if actions.is_empty() {
        return None;
    }
    Some(actions.iter().filter(|a| *a == "A").count() as f64 / actions.len() as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
