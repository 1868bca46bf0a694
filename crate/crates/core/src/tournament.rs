//! The trial loop: schedule, planning, paired moves, payoffs, meta questions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::thread;

use thiserror::Error;

use crate::agents::{
    build_agents, Agent, AgentError, Decision, MetaQuestion, Plan, PlanRequest, PlayerView,
};
use crate::client::{ClientError, ModelClient};
use crate::config::{ConfigError, TournamentConfig};
use crate::game::{check_termination, EndReason, MatchRecord, PlayerId};
use crate::log::{EventBody, EventLog, LogError, PlanStage, SCHEMA_VERSION};
use crate::metrics::meta_ground_truth;
use crate::prompt::{PromptError, PromptSet};
use crate::schedule::{build_schedule, validate_budget, Pairing};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum TrialError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("player {player}: {source}")]
    Agent {
        player: PlayerId,
        #[source]
        source: AgentError,
    },
    #[error(transparent)]
    Log(#[from] LogError),
}

impl TrialError {
    /// Whether the model backend caused the failure.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            TrialError::Agent {
                source: AgentError::Backend(_),
                ..
            }
        )
    }
}

/// Per-player bookkeeping across one trial.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlayerState {
    pub remaining_budget: u32,
    /// Rounds played in the trial so far.
    pub rounds_played: u32,
    pub total_score: i64,
    pub plan: Option<Plan>,
    /// Opponents met in at least one played round.
    pub seen: BTreeSet<PlayerId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TournamentState {
    pub config: TournamentConfig,
    pub schedule: Vec<Pairing>,
    pub completed_matches: Vec<MatchRecord>,
    pub current_match: Option<MatchRecord>,
    pub players: BTreeMap<PlayerId, PlayerState>,
    /// Number of log events this state reflects.
    pub events_applied: u64,
}

impl TournamentState {
    pub fn new(config: TournamentConfig, schedule: Vec<Pairing>) -> TournamentState {
        let players = config
            .player_ids()
            .into_iter()
            .map(|p| (p, PlayerState::fresh(config.budget)))
            .collect();
        TournamentState {
            config,
            schedule,
            completed_matches: Vec::new(),
            current_match: None,
            players,
            events_applied: 0,
        }
    }

    pub fn player(&self, id: PlayerId) -> &PlayerState {
        &self.players[&id]
    }

    /// Panics on an id outside the roster.
    pub fn player_mut(&mut self, id: PlayerId) -> &mut PlayerState {
        self.players.get_mut(&id).expect("player in roster")
    }

    /// `id`'s played matches, optionally followed by `current`.
    pub fn history_of(&self, id: PlayerId, current: Option<&MatchRecord>) -> Vec<MatchRecord> {
        self.completed_matches
            .iter()
            .chain(current)
            .filter(|m| m.involves(id) && !m.is_empty())
            .cloned()
            .collect()
    }
}

/// Seed of trial `index` for base seed `base`.
pub fn trial_seed(base: u64, index: u32) -> u64 {
    base.wrapping_add(u64::from(index))
}

/// The configuration one trial runs with.
pub fn trial_config(config: &TournamentConfig, index: u32) -> TournamentConfig {
    let mut c = config.clone();
    c.seed = trial_seed(config.seed, index);
    c
}

/// The configuration echoed into the log; the endpoint is left out so logs
/// of the same run against different hosts stay identical.
fn logged_config(config: &TournamentConfig) -> TournamentConfig {
    let mut c = config.clone();
    if let Some(m) = c.model.as_mut() {
        m.endpoint.clear();
    }
    c
}

pub struct Experiment {
    config: TournamentConfig,
    shared: Arc<TournamentConfig>,
    prompts: Arc<PromptSet>,
    client: Option<Arc<ModelClient>>,
}

/// Outcome of one trial.
#[derive(Debug)]
pub struct TrialOutcome {
    pub trial: u32,
    pub seed: u64,
    pub result: Result<TournamentState, TrialError>,
}

impl Experiment {
    /// Validates `config` and loads the prompt templates.
    pub fn new(config: TournamentConfig) -> Result<Experiment, TrialError> {
        validate_budget(&config)?;
        let prompts = Arc::new(PromptSet::load(config.templates_dir.as_deref())?);
        let client = config
            .model
            .clone()
            .filter(|_| config.uses_model())
            .map(|m| Arc::new(ModelClient::new(m)));
        Ok(Experiment {
            shared: Arc::new(config.clone()),
            config,
            prompts,
            client,
        })
    }

    pub fn config(&self) -> &TournamentConfig {
        &self.config
    }

    pub fn client(&self) -> Option<&Arc<ModelClient>> {
        self.client.as_ref()
    }

    /// Runs trial `index` into `log`. On failure the log is closed with an
    /// incomplete `trial_end` when possible.
    pub fn run_trial(&self, index: u32, log: &mut EventLog) -> Result<TournamentState, TrialError> {
        let config = trial_config(&self.config, index);
        let result = build_agents(
            &config,
            config.seed,
            self.client.as_ref(),
            &self.prompts,
            &self.shared,
        )
        .map_err(|source| TrialError::Agent {
            player: config.players[0].id,
            source,
        })
        .and_then(|agents| run_trial(&config, index, agents, log));
        if let Err(e) = &result {
            if !log.is_closed() && !matches!(e, TrialError::Log(_)) {
                let _ = log.append(EventBody::TrialEnd {
                    complete: false,
                    error: Some(e.to_string()),
                });
            }
        }
        result
    }

    /// Runs every trial, `parallel` at a time, each into the log from `make_log`.
    pub fn run<F>(&self, parallel: usize, make_log: F) -> Vec<TrialOutcome>
    where
        F: Fn(u32) -> Result<EventLog, LogError> + Sync,
    {
        let run_one = |i: u32| {
            let result = make_log(i)
                .map_err(TrialError::from)
                .and_then(|mut log| self.run_trial(i, &mut log));
            TrialOutcome {
                trial: i,
                seed: trial_seed(self.config.seed, i),
                result,
            }
        };
        let indices: Vec<u32> = (0..self.config.trials).collect();
        let parallel = parallel.max(1);
        let mut out = Vec::with_capacity(indices.len());
        for chunk in indices.chunks(parallel) {
            if chunk.len() == 1 {
                out.push(run_one(chunk[0]));
                continue;
            }
            thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|&i| s.spawn(move || run_one(i))).collect();
                for h in handles {
                    out.push(h.join().expect("trial thread panicked"));
                }
            });
        }
        out
    }

    /// Runs every trial writing logs under `dir/trial_XX/`.
    pub fn run_to_dir(&self, dir: &Path, parallel: usize) -> Vec<TrialOutcome> {
        self.run(parallel, |i| {
            let (events, exchanges) = crate::log::trial_paths(dir, i);
            if let Some(parent) = events.parent() {
                std::fs::create_dir_all(parent)?;
            }
            EventLog::create(&events, &exchanges)
        })
    }
}

struct Runner<'a> {
    config: &'a TournamentConfig,
    agents: BTreeMap<PlayerId, Box<dyn Agent>>,
    state: TournamentState,
    questions: Vec<MetaQuestion>,
    log: &'a mut EventLog,
}

/// Runs one trial of `config` (whose seed is the trial seed) with `agents`.
pub fn run_trial(
    config: &TournamentConfig,
    trial: u32,
    agents: BTreeMap<PlayerId, Box<dyn Agent>>,
    log: &mut EventLog,
) -> Result<TournamentState, TrialError> {
    let schedule = build_schedule(config)?;
    run_schedule(config, trial, schedule, agents, log)
}

/// Plays `schedule` as given, without the round-budget inequality check.
///
/// Budgets are still enforced round by round.
pub fn run_schedule(
    config: &TournamentConfig,
    trial: u32,
    schedule: Vec<Pairing>,
    agents: BTreeMap<PlayerId, Box<dyn Agent>>,
    log: &mut EventLog,
) -> Result<TournamentState, TrialError> {
    log.append(EventBody::TrialStart {
        schema_version: SCHEMA_VERSION,
        engine_version: ENGINE_VERSION.to_string(),
        trial,
        seed: config.seed,
        config: logged_config(config),
        schedule: schedule.clone(),
    })?;
    let mut runner = Runner {
        config,
        agents,
        state: TournamentState::new(logged_config(config), schedule.clone()),
        questions: MetaQuestion::configured(&config.meta),
        log,
    };
    for pairing in &schedule {
        runner.play_match(pairing)?;
    }
    runner.log.append(EventBody::TrialEnd {
        complete: true,
        error: None,
    })?;
    runner.state.events_applied = runner.log.events().len() as u64;
    Ok(runner.state)
}

impl Runner<'_> {
    fn agent_error(player: PlayerId) -> impl FnOnce(AgentError) -> TrialError {
        move |source| TrialError::Agent { player, source }
    }

    fn flush_exchanges(&mut self, player: PlayerId) -> Result<(), TrialError> {
        let exchanges = self
            .agents
            .get_mut(&player)
            .expect("agent for player")
            .drain_exchanges();
        for x in exchanges {
            self.log.append_exchange(player, x)?;
        }
        Ok(())
    }

    /// Logs exchanges of both players, then returns the first error if any.
    fn settle<T>(
        &mut self,
        players: [PlayerId; 2],
        results: [Result<T, AgentError>; 2],
    ) -> Result<[T; 2], TrialError> {
        self.flush_exchanges(players[0])?;
        self.flush_exchanges(players[1])?;
        let [r0, r1] = results;
        let v0 = r0.map_err(Self::agent_error(players[0]))?;
        let v1 = r1.map_err(Self::agent_error(players[1]))?;
        Ok([v0, v1])
    }

    fn play_match(&mut self, pairing: &Pairing) -> Result<(), TrialError> {
        let players = pairing.players;
        let match_id = pairing.ordinal;
        self.log.append(EventBody::MatchStart {
            match_id,
            players,
            intra_group: pairing.intra_group,
        })?;
        let mut record = MatchRecord::new(match_id, players, pairing.intra_group);
        let budgets = players.map(|p| self.state.player(p).remaining_budget);
        if budgets.contains(&0) {
            record.end_reason = Some(EndReason::Skipped);
        }
        while record.end_reason.is_none() {
            for p in players {
                let interval = self.config.plan_interval.max(1);
                if self.state.player(p).rounds_played.is_multiple_of(interval) {
                    self.plan(p, &record)?;
                }
            }
            let views = players.map(|p| {
                let opponent = record.opponent_of(p).expect("player in match");
                let ps = self.state.player(p);
                let masked = record.is_empty() && !ps.seen.contains(&opponent);
                PlayerView::build(
                    self.config,
                    &record,
                    p,
                    masked,
                    ps.remaining_budget,
                    ps.total_score,
                    ps.plan.clone(),
                    ps.rounds_played + 1,
                )
            });
            let decisions = self.decide_pair(players, &views)?;
            let masked = [views[0].masked, views[1].masked];
            let round = record.push_round(
                [decisions[0].action, decisions[1].action],
                &self.config.matrix,
            );
            round.exit_requested = [decisions[0].end_match, decisions[1].end_match];
            round.opponent_masked = masked;
            round.unparsed = [decisions[0].unparsed, decisions[1].unparsed];
            let round = round.clone();
            self.log.append(EventBody::MovePair {
                match_id,
                round: round.round_index,
                actions: round.actions,
                exit_requested: round.exit_requested,
                masked,
                unparsed: round.unparsed,
            })?;
            for (i, p) in players.iter().enumerate() {
                let ps = self.state.player_mut(*p);
                ps.remaining_budget -= 1;
                ps.rounds_played += 1;
                ps.total_score += round.payoffs[i];
                ps.seen.insert(players[1 - i]);
            }
            let totals = players.map(|p| self.state.player(p).total_score);
            let remaining = players.map(|p| self.state.player(p).remaining_budget);
            self.log.append(EventBody::Payoff {
                match_id,
                round: round.round_index,
                payoffs: round.payoffs,
                totals,
                remaining_budget: remaining,
            })?;
            record.end_reason = check_termination(
                record.len(),
                round.exit_requested,
                remaining,
                self.config.max_rounds,
            );
        }
        self.log.append(EventBody::MatchEnd {
            match_id,
            reason: record.end_reason.expect("loop ends with a reason"),
            rounds: record.len(),
        })?;
        if !record.is_empty() && !self.questions.is_empty() {
            self.ask_meta(&record)?;
        }
        self.state.completed_matches.push(record);
        Ok(())
    }

    fn decide_pair(
        &mut self,
        players: [PlayerId; 2],
        views: &[PlayerView; 2],
    ) -> Result<[Decision; 2], TrialError> {
        let mut a0 = self.agents.remove(&players[0]).expect("agent for player");
        let mut a1 = self.agents.remove(&players[1]).expect("agent for player");
        let results = if a0.is_remote() || a1.is_remote() {
            thread::scope(|s| {
                let h0 = s.spawn(|| a0.decide(&views[0]));
                let h1 = s.spawn(|| a1.decide(&views[1]));
                [
                    h0.join().expect("move thread panicked"),
                    h1.join().expect("move thread panicked"),
                ]
            })
        } else {
            [a0.decide(&views[0]), a1.decide(&views[1])]
        };
        self.agents.insert(players[0], a0);
        self.agents.insert(players[1], a1);
        self.settle(players, results)
    }

    /// Draft plan, critique, final plan.
    fn plan(&mut self, player: PlayerId, current: &MatchRecord) -> Result<(), TrialError> {
        let history = self.state.history_of(player, Some(current));
        let ps = self.state.player(player).clone();
        let global_round = ps.rounds_played + 1;
        let mut request = PlanRequest {
            player,
            history: &history,
            previous_plan: ps.plan.as_ref(),
            critique: None,
            global_round,
            remaining_budget: ps.remaining_budget,
            total_score: ps.total_score,
        };
        let agent = self.agents.get_mut(&player).expect("agent for player");
        let draft = agent.make_plan(&request);
        self.flush_exchanges(player)?;
        let draft = draft.map_err(Self::agent_error(player))?;
        self.log.append(EventBody::Plan {
            player,
            global_round,
            stage: PlanStage::Draft,
            text: draft.text.clone(),
            unparsed: draft.unparsed,
        })?;

        let agent = self.agents.get_mut(&player).expect("agent for player");
        let critique = agent.critique_plan(&draft, &request);
        self.flush_exchanges(player)?;
        let critique = critique.map_err(Self::agent_error(player))?;
        self.log.append(EventBody::Critique {
            player,
            global_round,
            text: critique.text.clone(),
            unparsed: critique.unparsed,
        })?;

        request.previous_plan = Some(&draft);
        request.critique = Some(&critique);
        let agent = self.agents.get_mut(&player).expect("agent for player");
        let last = agent.make_plan(&request);
        self.flush_exchanges(player)?;
        let last = last.map_err(Self::agent_error(player))?;
        self.log.append(EventBody::Plan {
            player,
            global_round,
            stage: PlanStage::Final,
            text: last.text.clone(),
            unparsed: last.unparsed,
        })?;
        self.state.player_mut(player).plan = Some(last);
        Ok(())
    }

    fn ask_meta(&mut self, record: &MatchRecord) -> Result<(), TrialError> {
        for p in record.players {
            let ps = self.state.player(p);
            let view = PlayerView::build(
                self.config,
                record,
                p,
                false,
                ps.remaining_budget,
                ps.total_score,
                ps.plan.clone(),
                ps.rounds_played,
            );
            let agent = self.agents.get_mut(&p).expect("agent for player");
            let answers = agent.answer_meta(&self.questions, record, &view);
            self.flush_exchanges(p)?;
            let answers = answers.map_err(Self::agent_error(p))?;
            let truth = meta_ground_truth(record, p, &self.config.meta);
            self.log.append(EventBody::MetaQa {
                match_id: record.match_id,
                player: p,
                answers,
                truth,
            })?;
        }
        Ok(())
    }
}

/// Checks the model backend answers before a run starts.
pub fn preflight(experiment: &Experiment) -> Result<(), ClientError> {
    match experiment.client() {
        Some(c) => c.health_check(),
        None => Ok(()),
    }
}
