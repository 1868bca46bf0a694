//! Pairing schedules for the three conditions.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Condition, ConfigError, TournamentConfig};
use crate::game::PlayerId;

/// One scheduled match.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pairing {
    pub ordinal: u32,
    /// Lower id first.
    pub players: [PlayerId; 2],
    pub intra_group: bool,
}

impl fmt::Display for Pairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:>3}  player {} vs player {}  {}",
            self.ordinal,
            self.players[0],
            self.players[1],
            if self.intra_group { "intra" } else { "inter" }
        )
    }
}

/// Matches per player and the checked budget inequality.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetCheck {
    pub max_rounds: u32,
    pub budget: u32,
    pub matches: BTreeMap<PlayerId, u32>,
}

impl BudgetCheck {
    pub fn min_matches(&self) -> u32 {
        self.matches.values().copied().min().unwrap_or(0)
    }
}

fn unordered_pairs(config: &TournamentConfig) -> Vec<([PlayerId; 2], bool)> {
    let mut ids = config.player_ids();
    ids.sort();
    let mut pairs = Vec::new();
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            let intra = config.same_group(a, b);
            if config.condition == Condition::Gc && intra {
                continue;
            }
            pairs.push(([a, b], intra));
        }
    }
    pairs
}

/// Matches per player implied by the condition, checked against N < n*m.
pub fn validate_budget(config: &TournamentConfig) -> Result<BudgetCheck, ConfigError> {
    config.validate_structure()?;
    let mut matches: BTreeMap<PlayerId, u32> =
        config.player_ids().into_iter().map(|p| (p, 0)).collect();
    for (pair, _) in unordered_pairs(config) {
        for p in pair {
            *matches.entry(p).or_default() += 1;
        }
    }
    for (&player, &m) in &matches {
        let product = u64::from(config.max_rounds) * u64::from(m);
        if u64::from(config.budget) >= product {
            return Err(ConfigError::Budget {
                player,
                budget: config.budget,
                max_rounds: config.max_rounds,
                matches: m,
                product,
            });
        }
    }
    Ok(BudgetCheck {
        max_rounds: config.max_rounds,
        budget: config.budget,
        matches,
    })
}

/// All pairings of one trial, shuffled by `config.seed`.
pub fn build_schedule(config: &TournamentConfig) -> Result<Vec<Pairing>, ConfigError> {
    validate_budget(config)?;
    Ok(shuffled_pairings(config))
}

/// The shuffled pairings without the budget check.
pub fn shuffled_pairings(config: &TournamentConfig) -> Vec<Pairing> {
    let mut pairs = unordered_pairs(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    pairs.shuffle(&mut rng);
    pairs
        .into_iter()
        .enumerate()
        .map(|(i, (players, intra_group))| Pairing {
            ordinal: i as u32,
            players,
            intra_group,
        })
        .collect()
}
