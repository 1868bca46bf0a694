//! Append-only JSON-lines event log, exchange sidecar, and replay.
//!
//! Each line is one [`Event`]: `{"seq": 3, "kind": "payoff", "payload": {...}}`.
//! Model prompts and replies go to a sidecar file keyed by the `seq` of the
//! matching `model_exchange_ref` event, so the main log stays small and is
//! byte-identical across reruns of a scripted or mock-backed experiment.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{MetaAnswer, Plan};
use crate::client::{unix_millis, ModelExchange};
use crate::config::TournamentConfig;
use crate::game::{resolve_round, Action, EndReason, MatchRecord, PlayerId, RoundRecord};
use crate::metrics::MetaTruth;
use crate::prompt::PromptKind;
use crate::schedule::Pairing;
use crate::tournament::{PlayerState, TournamentState};

/// Version of the event and CSV schemas.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("cannot append to a closed log")]
    Closed,
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("unsupported schema version {found} (expected {expected})")]
    Schema { found: u32, expected: u32 },
    #[error("replay mismatch at event {seq}: {message}")]
    Replay { seq: u64, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStage {
    Draft,
    Final,
}

#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    TrialStart {
        schema_version: u32,
        engine_version: String,
        trial: u32,
        seed: u64,
        config: TournamentConfig,
        schedule: Vec<Pairing>,
    },
    MatchStart {
        match_id: u32,
        players: [PlayerId; 2],
        intra_group: bool,
    },
    Plan {
        player: PlayerId,
        global_round: u32,
        stage: PlanStage,
        text: String,
        #[serde(default)]
        unparsed: bool,
    },
    Critique {
        player: PlayerId,
        global_round: u32,
        text: String,
        #[serde(default)]
        unparsed: bool,
    },
    ModelExchangeRef {
        player: PlayerId,
        purpose: PromptKind,
        attempt: u32,
    },
    MovePair {
        match_id: u32,
        round: u32,
        actions: [Action; 2],
        exit_requested: [bool; 2],
        masked: [bool; 2],
        #[serde(default)]
        unparsed: [bool; 2],
    },
    Payoff {
        match_id: u32,
        round: u32,
        payoffs: [i64; 2],
        totals: [i64; 2],
        remaining_budget: [u32; 2],
    },
    MatchEnd {
        match_id: u32,
        reason: EndReason,
        rounds: u32,
    },
    MetaQa {
        match_id: u32,
        player: PlayerId,
        answers: Vec<MetaAnswer>,
        truth: MetaTruth,
    },
    TrialEnd {
        complete: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

/// A sidecar line: one model exchange.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRecord {
    pub event_seq: u64,
    pub player: PlayerId,
    /// Non-decreasing write time in Unix milliseconds.
    pub logged_at_ms: u64,
    #[serde(flatten)]
    pub exchange: ModelExchange,
}

type Sink = Box<dyn Write + Send>;

/// Writer for one trial's log; keeps the events in memory as well.
pub struct EventLog {
    events: Vec<Event>,
    out: Option<Sink>,
    exchanges_out: Option<Sink>,
    exchanges: Vec<ExchangeRecord>,
    closed: bool,
    last_logged_ms: u64,
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog")
            .field("events", &self.events.len())
            .field("closed", &self.closed)
            .finish()
    }
}

impl EventLog {
    pub fn in_memory() -> EventLog {
        EventLog {
            events: Vec::new(),
            out: None,
            exchanges_out: None,
            exchanges: Vec::new(),
            closed: false,
            last_logged_ms: 0,
        }
    }

    /// Creates (truncating) the event file and the exchange sidecar.
    pub fn create(events: &Path, exchanges: &Path) -> Result<EventLog, LogError> {
        let mut log = EventLog::in_memory();
        log.out = Some(Box::new(BufWriter::new(File::create(events)?)));
        log.exchanges_out = Some(Box::new(BufWriter::new(File::create(exchanges)?)));
        Ok(log)
    }

    pub fn with_writers(events: Sink, exchanges: Sink) -> EventLog {
        let mut log = EventLog::in_memory();
        log.out = Some(events);
        log.exchanges_out = Some(exchanges);
        log
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn exchanges(&self) -> &[ExchangeRecord] {
        &self.exchanges
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// Appends and flushes one event, returning its sequence number.
    pub fn append(&mut self, body: EventBody) -> Result<u64, LogError> {
        if self.closed {
            return Err(LogError::Closed);
        }
        let seq = self.events.len() as u64;
        let closing = matches!(body, EventBody::TrialEnd { .. });
        let event = Event { seq, body };
        if let Some(out) = self.out.as_mut() {
            let mut line = serde_json::to_string(&event).map_err(io::Error::other)?;
            line.push('\n');
            out.write_all(line.as_bytes())?;
            out.flush()?;
        }
        self.events.push(event);
        if closing {
            self.closed = true;
            if let Some(x) = self.exchanges_out.as_mut() {
                x.flush()?;
            }
        }
        Ok(seq)
    }

    /// Records a model exchange: a reference event in the log, the texts in the sidecar.
    pub fn append_exchange(
        &mut self,
        player: PlayerId,
        exchange: ModelExchange,
    ) -> Result<u64, LogError> {
        let seq = self.append(EventBody::ModelExchangeRef {
            player,
            purpose: exchange.purpose,
            attempt: exchange.attempt,
        })?;
        self.last_logged_ms = self.last_logged_ms.max(unix_millis());
        let record = ExchangeRecord {
            event_seq: seq,
            player,
            logged_at_ms: self.last_logged_ms,
            exchange,
        };
        if let Some(out) = self.exchanges_out.as_mut() {
            let mut line = serde_json::to_string(&record).map_err(io::Error::other)?;
            line.push('\n');
            out.write_all(line.as_bytes())?;
            out.flush()?;
        }
        self.exchanges.push(record);
        Ok(seq)
    }
}

fn parse_lines<T: for<'de> Deserialize<'de>>(
    reader: impl BufRead,
    origin: &str,
) -> Result<Vec<T>, LogError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| LogError::Parse {
            path: origin.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn parse_events(text: &str) -> Result<Vec<Event>, LogError> {
    parse_lines(text.as_bytes(), "<memory>")
}

pub fn read_events(path: &Path) -> Result<Vec<Event>, LogError> {
    let file = File::open(path)?;
    parse_lines(BufReader::new(file), &path.display().to_string())
}

pub fn read_exchanges(path: &Path) -> Result<Vec<ExchangeRecord>, LogError> {
    let file = File::open(path)?;
    parse_lines(BufReader::new(file), &path.display().to_string())
}

/// Post-match answers of one player.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub match_id: u32,
    pub player: PlayerId,
    pub answers: Vec<MetaAnswer>,
    pub truth: MetaTruth,
}

/// A planning step found in the log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanningRecord {
    pub player: PlayerId,
    pub global_round: u32,
    pub kind: PlanningKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanningKind {
    Draft,
    Critique,
    Final,
}

/// One trial rebuilt from its event log.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialLog {
    pub trial: u32,
    pub seed: u64,
    pub state: TournamentState,
    pub meta: Vec<MetaRecord>,
    pub planning: Vec<PlanningRecord>,
    /// Model exchange references per player, in log order.
    pub exchange_refs: Vec<(u64, PlayerId, PromptKind)>,
    pub complete: bool,
    pub error: Option<String>,
}

impl TrialLog {
    pub fn config(&self) -> &TournamentConfig {
        &self.state.config
    }

    /// Matches in execution order, including skipped ones.
    pub fn matches(&self) -> &[MatchRecord] {
        &self.state.completed_matches
    }
}

fn mismatch(seq: u64, message: impl Into<String>) -> LogError {
    LogError::Replay {
        seq,
        message: message.into(),
    }
}

/// Rebuilds the trial state from `events`, checking every payoff against the
/// matrix and every budget and total against the recount.
pub fn replay(events: &[Event]) -> Result<TrialLog, LogError> {
    let Some(first) = events.first() else {
        return Err(mismatch(0, "empty log"));
    };
    let EventBody::TrialStart {
        schema_version,
        trial,
        seed,
        config,
        schedule,
        ..
    } = &first.body
    else {
        return Err(mismatch(first.seq, "log does not start with trial_start"));
    };
    if *schema_version != SCHEMA_VERSION {
        return Err(LogError::Schema {
            found: *schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let mut state = TournamentState::new(config.clone(), schedule.clone());
    let mut log = TrialLog {
        trial: *trial,
        seed: *seed,
        state: TournamentState::new(config.clone(), Vec::new()),
        meta: Vec::new(),
        planning: Vec::new(),
        exchange_refs: Vec::new(),
        complete: false,
        error: None,
    };
    let mut pending: Option<RoundRecord> = None;
    let mut previous_seq = first.seq;
    let mut ended = false;
    let mut draft: BTreeMap<PlayerId, Plan> = BTreeMap::new();

    for event in &events[1..] {
        let seq = event.seq;
        if seq <= previous_seq {
            return Err(mismatch(seq, "sequence numbers must strictly increase"));
        }
        previous_seq = seq;
        if ended {
            return Err(mismatch(seq, "event after trial_end"));
        }
        match &event.body {
            EventBody::TrialStart { .. } => return Err(mismatch(seq, "second trial_start")),
            EventBody::MatchStart {
                match_id,
                players,
                intra_group,
            } => {
                if state.current_match.is_some() {
                    return Err(mismatch(seq, "match_start inside a match"));
                }
                state.current_match = Some(MatchRecord::new(*match_id, *players, *intra_group));
            }
            EventBody::Plan {
                player,
                global_round,
                stage,
                text,
                unparsed,
            } => {
                let plan = Plan {
                    text: text.clone(),
                    created_at_round: *global_round,
                    unparsed: *unparsed,
                };
                let kind = match stage {
                    PlanStage::Draft => {
                        draft.insert(*player, plan);
                        PlanningKind::Draft
                    }
                    PlanStage::Final => {
                        draft.remove(player);
                        state.player_mut(*player).plan = Some(plan);
                        PlanningKind::Final
                    }
                };
                log.planning.push(PlanningRecord {
                    player: *player,
                    global_round: *global_round,
                    kind,
                });
            }
            EventBody::Critique {
                player,
                global_round,
                ..
            } => log.planning.push(PlanningRecord {
                player: *player,
                global_round: *global_round,
                kind: PlanningKind::Critique,
            }),
            EventBody::ModelExchangeRef {
                player, purpose, ..
            } => log.exchange_refs.push((seq, *player, *purpose)),
            EventBody::MovePair {
                match_id,
                round,
                actions,
                exit_requested,
                masked,
                unparsed,
            } => {
                let Some(current) = state.current_match.as_ref() else {
                    return Err(mismatch(seq, "move_pair outside a match"));
                };
                if pending.is_some() {
                    return Err(mismatch(seq, "move_pair without payoff"));
                }
                if current.match_id != *match_id || *round != current.len() + 1 {
                    return Err(mismatch(
                        seq,
                        format!("unexpected round {match_id}/{round}"),
                    ));
                }
                let mut record = RoundRecord::resolve(*match_id, *round, *actions, &config.matrix);
                record.exit_requested = *exit_requested;
                record.opponent_masked = *masked;
                record.unparsed = *unparsed;
                pending = Some(record);
            }
            EventBody::Payoff {
                match_id,
                round,
                payoffs,
                totals,
                remaining_budget,
            } => {
                let Some(record) = pending.take() else {
                    return Err(mismatch(seq, "payoff without move_pair"));
                };
                if record.match_id != *match_id || record.round_index != *round {
                    return Err(mismatch(seq, "payoff for a different round"));
                }
                let (p0, p1) = resolve_round(record.actions[0], record.actions[1], &config.matrix);
                if [p0, p1] != *payoffs {
                    return Err(mismatch(
                        seq,
                        format!("stored payoffs {payoffs:?} but the matrix gives [{p0}, {p1}]"),
                    ));
                }
                let current = state.current_match.as_mut().expect("checked at move_pair");
                let players = current.players;
                current.rounds.push(record);
                for (i, p) in players.iter().enumerate() {
                    let opponent = players[1 - i];
                    let ps = state.player_mut(*p);
                    ps.rounds_played += 1;
                    ps.remaining_budget = ps.remaining_budget.checked_sub(1).ok_or_else(|| {
                        mismatch(seq, format!("player {p} exceeded the round budget"))
                    })?;
                    ps.total_score += payoffs[i];
                    ps.seen.insert(opponent);
                    if ps.total_score != totals[i] || ps.remaining_budget != remaining_budget[i] {
                        return Err(mismatch(
                            seq,
                            format!(
                                "player {p}: stored total/budget {}/{} but recount gives {}/{}",
                                totals[i], remaining_budget[i], ps.total_score, ps.remaining_budget
                            ),
                        ));
                    }
                }
            }
            EventBody::MatchEnd {
                match_id,
                reason,
                rounds,
            } => {
                if pending.is_some() {
                    return Err(mismatch(seq, "match_end before payoff"));
                }
                let Some(mut current) = state.current_match.take() else {
                    return Err(mismatch(seq, "match_end outside a match"));
                };
                if current.match_id != *match_id || current.len() != *rounds {
                    return Err(mismatch(
                        seq,
                        "match_end does not match the recorded rounds",
                    ));
                }
                if current.len() > config.max_rounds {
                    return Err(mismatch(seq, "match longer than the round cap"));
                }
                current.end_reason = Some(*reason);
                state.completed_matches.push(current);
            }
            EventBody::MetaQa {
                match_id,
                player,
                answers,
                truth,
            } => log.meta.push(MetaRecord {
                match_id: *match_id,
                player: *player,
                answers: answers.clone(),
                truth: *truth,
            }),
            EventBody::TrialEnd { complete, error } => {
                log.complete = *complete;
                log.error = error.clone();
                ended = true;
            }
        }
    }
    state.events_applied = events.len() as u64;
    log.state = state;
    Ok(log)
}

/// The event and sidecar paths of trial `index` under `dir`.
pub fn trial_paths(dir: &Path, index: u32) -> (PathBuf, PathBuf) {
    let trial_dir = dir.join(format!("trial_{index:02}"));
    (
        trial_dir.join("events.jsonl"),
        trial_dir.join("exchanges.jsonl"),
    )
}

/// Event logs found under `path`: the file itself, or every `events.jsonl` below a directory.
pub fn discover_logs(path: &Path) -> io::Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.exists() {
        return Err(io::Error::new(
            io::ErrorKind::NotFound,
            format!("{} does not exist", path.display()),
        ));
    }
    let mut found = BTreeSet::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == "events.jsonl") {
                found.insert(p);
            }
        }
    }
    Ok(found.into_iter().collect())
}

impl PlayerState {
    pub fn fresh(budget: u32) -> PlayerState {
        PlayerState {
            remaining_budget: budget,
            rounds_played: 0,
            total_score: 0,
            plan: None,
            seen: BTreeSet::new(),
        }
    }
}
