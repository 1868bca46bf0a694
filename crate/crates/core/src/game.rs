//! Stage-game mechanics: actions, payoffs and match termination.
//!
//! Actions are neutral (`A`/`B`). `A` carries the cooperative meaning for the
//! metrics, `B` the defecting one, but nothing the agents see ever says so.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One of the two moves available in every round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    A,
    B,
}

impl Action {
    /// The token agents read and write for this action.
    pub fn token(self) -> &'static str {
        match self {
            Action::A => "action_a",
            Action::B => "action_b",
        }
    }

    /// Parses the exact reply token; anything else is rejected.
    pub fn from_token(token: &str) -> Option<Action> {
        match token {
            "action_a" => Some(Action::A),
            "action_b" => Some(Action::B),
            _ => None,
        }
    }

    pub fn is_cooperative(self) -> bool {
        self == Action::A
    }

    pub fn opposite(self) -> Action {
        match self {
            Action::A => Action::B,
            Action::B => Action::A,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::A => "A",
            Action::B => "B",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlayerId(pub u32);

impl fmt::Display for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub u32);

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatrixError {
    #[error(
        "payoffs must satisfy temptation > mutual-A > mutual-B > sucker, got {temptation} > {reward} > {punishment} > {sucker}"
    )]
    Ordering {
        temptation: i64,
        reward: i64,
        punishment: i64,
        sucker: i64,
    },
}

/// Points awarded for each action profile.
///
/// `reward_ab` is the mixed outcome as `(points of the A player, points of
/// the B player)`; the matrix is symmetric so the reverse profile swaps it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayoffMatrix {
    pub reward_aa: i64,
    pub reward_ab: (i64, i64),
    pub reward_bb: i64,
}

impl PayoffMatrix {
    /// The values stated in the game rules shown to agents: 3/3, 0/5, 1/1.
    pub const PROMPT_DEFAULT: PayoffMatrix = PayoffMatrix {
        reward_aa: 3,
        reward_ab: (0, 5),
        reward_bb: 1,
    };

    /// The textbook table variant: 3/3, -1/5, 0/0.
    pub const TABLE: PayoffMatrix = PayoffMatrix {
        reward_aa: 3,
        reward_ab: (-1, 5),
        reward_bb: 0,
    };

    pub fn new(reward_aa: i64, reward_ab: (i64, i64), reward_bb: i64) -> Result<Self, MatrixError> {
        let matrix = PayoffMatrix {
            reward_aa,
            reward_ab,
            reward_bb,
        };
        matrix.validate()?;
        Ok(matrix)
    }

    pub fn temptation(&self) -> i64 {
        self.reward_ab.1
    }

    pub fn sucker(&self) -> i64 {
        self.reward_ab.0
    }

    pub fn validate(&self) -> Result<(), MatrixError> {
        let ordered = self.temptation() > self.reward_aa
            && self.reward_aa > self.reward_bb
            && self.reward_bb > self.sucker();
        if ordered {
            Ok(())
        } else {
            Err(MatrixError::Ordering {
                temptation: self.temptation(),
                reward: self.reward_aa,
                punishment: self.reward_bb,
                sucker: self.sucker(),
            })
        }
    }
}

impl Default for PayoffMatrix {
    fn default() -> Self {
        PayoffMatrix::PROMPT_DEFAULT
    }
}

/// Points for both players given their simultaneous actions.
pub fn resolve_round(first: Action, second: Action, matrix: &PayoffMatrix) -> (i64, i64) {
    match (first, second) {
        (Action::A, Action::A) => (matrix.reward_aa, matrix.reward_aa),
        (Action::A, Action::B) => matrix.reward_ab,
        (Action::B, Action::A) => (matrix.reward_ab.1, matrix.reward_ab.0),
        (Action::B, Action::B) => (matrix.reward_bb, matrix.reward_bb),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    RoundLimit,
    PlayerExit,
    BudgetExhausted,
    Skipped,
}

impl fmt::Display for EndReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EndReason::RoundLimit => "round_limit",
            EndReason::PlayerExit => "player_exit",
            EndReason::BudgetExhausted => "budget_exhausted",
            EndReason::Skipped => "skipped",
        })
    }
}

/// One resolved round. Index 0 of every pair refers to `MatchRecord::players[0]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub match_id: u32,
    /// 1-based position within the match.
    pub round_index: u32,
    pub actions: [Action; 2],
    pub payoffs: [i64; 2],
    pub exit_requested: [bool; 2],
    pub opponent_masked: [bool; 2],
    /// Set when a model reply could not be parsed and the fallback action was used.
    #[serde(default)]
    pub unparsed: [bool; 2],
}

impl RoundRecord {
    pub fn resolve(
        match_id: u32,
        round_index: u32,
        actions: [Action; 2],
        matrix: &PayoffMatrix,
    ) -> RoundRecord {
        let (p0, p1) = resolve_round(actions[0], actions[1], matrix);
        RoundRecord {
            match_id,
            round_index,
            actions,
            payoffs: [p0, p1],
            exit_requested: [false; 2],
            opponent_masked: [false; 2],
            unparsed: [false; 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub match_id: u32,
    pub players: [PlayerId; 2],
    pub intra_group: bool,
    pub rounds: Vec<RoundRecord>,
    pub end_reason: Option<EndReason>,
}

impl MatchRecord {
    pub fn new(match_id: u32, players: [PlayerId; 2], intra_group: bool) -> Self {
        MatchRecord {
            match_id,
            players,
            intra_group,
            rounds: Vec::new(),
            end_reason: None,
        }
    }

    /// Position of `player` in this match, if they play in it.
    pub fn seat(&self, player: PlayerId) -> Option<usize> {
        self.players.iter().position(|p| *p == player)
    }

    pub fn opponent_of(&self, player: PlayerId) -> Option<PlayerId> {
        self.seat(player).map(|s| self.players[1 - s])
    }

    pub fn involves(&self, player: PlayerId) -> bool {
        self.seat(player).is_some()
    }

    pub fn len(&self) -> u32 {
        self.rounds.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.end_reason.is_some()
    }

    /// Total points scored by `player` in this match.
    pub fn score_of(&self, player: PlayerId) -> i64 {
        match self.seat(player) {
            Some(s) => self.rounds.iter().map(|r| r.payoffs[s]).sum(),
            None => 0,
        }
    }

    /// Actions of `player` in round order.
    pub fn actions_of(&self, player: PlayerId) -> Vec<Action> {
        match self.seat(player) {
            Some(s) => self.rounds.iter().map(|r| r.actions[s]).collect(),
            None => Vec::new(),
        }
    }

    /// Appends the next round, numbering it contiguously.
    pub fn push_round(&mut self, actions: [Action; 2], matrix: &PayoffMatrix) -> &mut RoundRecord {
        let index = self.len() + 1;
        self.rounds
            .push(RoundRecord::resolve(self.match_id, index, actions, matrix));
        self.rounds.last_mut().expect("round just pushed")
    }
}

/// Decides whether the match ends after the rounds resolved so far.
///
/// `remaining_budget` is each player's budget after those rounds.
/// Budget exhaustion wins over the round cap, which wins over a requested exit.
pub fn check_termination(
    rounds_played: u32,
    exit_flags: [bool; 2],
    remaining_budget: [u32; 2],
    max_rounds: u32,
) -> Option<EndReason> {
    if remaining_budget.contains(&0) {
        Some(EndReason::BudgetExhausted)
    } else if rounds_played >= max_rounds {
        Some(EndReason::RoundLimit)
    } else if exit_flags.contains(&true) {
        Some(EndReason::PlayerExit)
    } else {
        None
    }
}
