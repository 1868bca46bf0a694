//! Cooperation metrics and confidence intervals.
//!
//! Per-player rates are computed from the player's actions in the order they
//! were played across the whole trial. Aggregates treat every (trial, player)
//! as one sample by default; [`SamplingUnit`] switches to per-trial or
//! per-player averages first.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::agents::{MetaAnswer, MetaQuestionId, MetaValue};
use crate::config::MetaSettings;
use crate::game::{Action, MatchRecord, PlayerId};
use crate::log::TrialLog;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("at least one sample is required")]
    NoSamples,
    #[error("confidence level {0} outside (0, 1)")]
    Level(f64),
}

pub const DEFAULT_LEVEL: f64 = 0.95;

/// Share of A in `actions`; `None` for an empty sequence.
pub fn cooperation_rate(actions: &[Action]) -> Option<f64> {
    if actions.is_empty() {
        return None;
    }
    let cooperative = actions.iter().filter(|a| a.is_cooperative()).count();
    Some(cooperative as f64 / actions.len() as f64)
}

/// Share of matches opened with A, given each match's first action.
pub fn one_shot_rate(first_moves: &[Action]) -> Option<f64> {
    cooperation_rate(first_moves)
}

/// `p_c` after every round of `actions`.
pub fn running_rates(actions: &[Action]) -> Vec<f64> {
    let mut cooperative = 0usize;
    actions
        .iter()
        .enumerate()
        .map(|(i, a)| {
            cooperative += usize::from(a.is_cooperative());
            cooperative as f64 / (i + 1) as f64
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiEstimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub half_width: f64,
    pub samples: usize,
    /// Fewer than two samples: the interval collapses to the mean.
    pub degenerate: bool,
}

impl CiEstimate {
    /// Interval bounds clipped to [0, 1] for reporting rates.
    pub fn clamped(&self) -> (f64, f64) {
        (self.ci_low.max(0.0), self.ci_high.min(1.0))
    }
}

fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Mean with a two-sided Student-t interval at `level`.
pub fn mean_with_ci(samples: &[f64], level: f64) -> Result<CiEstimate, MetricsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::Level(level));
    }
    if samples.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    let k = samples.len();
    let m = if samples.iter().all(|x| *x == samples[0]) {
        samples[0]
    } else {
        mean(samples)
    };
    if k == 1 {
        return Ok(CiEstimate {
            mean: m,
            ci_low: m,
            ci_high: m,
            half_width: 0.0,
            samples: 1,
            degenerate: true,
        });
    }
    let variance = samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1) as f64;
    let sd = variance.sqrt();
    let half_width = if samples.iter().all(|x| *x == samples[0]) {
        0.0
    } else {
        let t = StudentsT::new(0.0, 1.0, (k - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf((1.0 + level) / 2.0);
        t * sd / (k as f64).sqrt()
    };
    Ok(CiEstimate {
        mean: m,
        ci_low: m - half_width,
        ci_high: m + half_width,
        half_width,
        samples: k,
        degenerate: false,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingUnit {
    /// Every (trial, player) is one sample.
    #[default]
    PlayerTrial,
    /// Players are averaged within each trial first.
    Trial,
    /// Trials are averaged for each player first.
    Player,
}

type SampleKey = (u32, PlayerId);

fn reduce(samples: &BTreeMap<SampleKey, f64>, unit: SamplingUnit) -> Vec<f64> {
    let grouped = |key: fn(&SampleKey) -> u64| {
        let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for (k, v) in samples {
            groups.entry(key(k)).or_default().push(*v);
        }
        groups.values().map(|g| mean(g)).collect()
    };
    match unit {
        SamplingUnit::PlayerTrial => samples.values().copied().collect(),
        SamplingUnit::Trial => grouped(|k| u64::from(k.0)),
        SamplingUnit::Player => grouped(|k| u64::from(k.1 .0)),
    }
}

/// Each player's actions in the order played during the trial.
pub fn player_actions(trial: &TrialLog) -> BTreeMap<PlayerId, Vec<Action>> {
    let mut out: BTreeMap<PlayerId, Vec<Action>> = trial
        .config()
        .player_ids()
        .into_iter()
        .map(|p| (p, Vec::new()))
        .collect();
    for m in trial.matches() {
        for (seat, p) in m.players.iter().enumerate() {
            out.entry(*p)
                .or_default()
                .extend(m.rounds.iter().map(|r| r.actions[seat]));
        }
    }
    out
}

/// Each player's opening action of every match that had at least one round.
pub fn player_first_moves(trial: &TrialLog) -> BTreeMap<PlayerId, Vec<Action>> {
    let mut out: BTreeMap<PlayerId, Vec<Action>> = trial
        .config()
        .player_ids()
        .into_iter()
        .map(|p| (p, Vec::new()))
        .collect();
    for m in trial.matches() {
        if let Some(first) = m.rounds.first() {
            for (seat, p) in m.players.iter().enumerate() {
                out.entry(*p).or_default().push(first.actions[seat]);
            }
        }
    }
    out
}

/// One point of an aggregated series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    /// Round number (cooperation) or match number (one-shot), 1-based.
    pub index: u32,
    pub estimate: CiEstimate,
}

fn prefix_series(
    trials: &[TrialLog],
    sequences: impl Fn(&TrialLog) -> BTreeMap<PlayerId, Vec<Action>>,
    unit: SamplingUnit,
    level: f64,
) -> Vec<SeriesPoint> {
    let mut by_index: BTreeMap<u32, BTreeMap<SampleKey, f64>> = BTreeMap::new();
    for t in trials {
        for (player, actions) in sequences(t) {
            for (i, rate) in running_rates(&actions).into_iter().enumerate() {
                by_index
                    .entry(i as u32 + 1)
                    .or_default()
                    .insert((t.trial, player), rate);
            }
        }
    }
    by_index
        .into_iter()
        .map(|(index, samples)| SeriesPoint {
            index,
            estimate: mean_with_ci(&reduce(&samples, unit), level).expect("non-empty samples"),
        })
        .collect()
}

/// Mean `p_c` over players for every round number, with its interval.
pub fn cooperation_series(trials: &[TrialLog], unit: SamplingUnit, level: f64) -> Vec<SeriesPoint> {
    prefix_series(trials, player_actions, unit, level)
}

/// Mean `p_osc` over players for every match number, with its interval.
pub fn one_shot_series(trials: &[TrialLog], unit: SamplingUnit, level: f64) -> Vec<SeriesPoint> {
    prefix_series(trials, player_first_moves, unit, level)
}

/// Overall rates of one condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    /// Mean over samples of each player's overall cooperation rate.
    pub cooperation: Option<CiEstimate>,
    /// Mean over samples of each player's overall one-shot rate.
    pub one_shot: Option<CiEstimate>,
}

fn overall(
    trials: &[TrialLog],
    sequences: impl Fn(&TrialLog) -> BTreeMap<PlayerId, Vec<Action>>,
    unit: SamplingUnit,
    level: f64,
) -> Option<CiEstimate> {
    let mut samples = BTreeMap::new();
    for t in trials {
        for (player, actions) in sequences(t) {
            if let Some(rate) = cooperation_rate(&actions) {
                samples.insert((t.trial, player), rate);
            }
        }
    }
    mean_with_ci(&reduce(&samples, unit), level).ok()
}

pub fn condition_summary(trials: &[TrialLog], unit: SamplingUnit, level: f64) -> ConditionSummary {
    ConditionSummary {
        cooperation: overall(trials, player_actions, unit, level),
        one_shot: overall(trials, player_first_moves, unit, level),
    }
}

/// Cooperation inside and across groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSplit {
    /// Per-sample rates over intra-group rounds.
    pub intra_samples: Vec<f64>,
    pub inter_samples: Vec<f64>,
    pub intra: Option<CiEstimate>,
    pub inter: Option<CiEstimate>,
}

/// Cooperation rates over intra-group and inter-group rounds separately.
///
/// Under GC there are no intra-group matches, so the intra side is empty.
pub fn group_split_rates(trials: &[TrialLog], unit: SamplingUnit, level: f64) -> GroupSplit {
    let mut intra = BTreeMap::new();
    let mut inter = BTreeMap::new();
    for t in trials {
        let mut split: BTreeMap<PlayerId, (Vec<Action>, Vec<Action>)> = BTreeMap::new();
        for m in t.matches() {
            for (seat, p) in m.players.iter().enumerate() {
                let entry = split.entry(*p).or_default();
                let side = if m.intra_group {
                    &mut entry.0
                } else {
                    &mut entry.1
                };
                side.extend(m.rounds.iter().map(|r| r.actions[seat]));
            }
        }
        for (player, (a, b)) in split {
            if let Some(rate) = cooperation_rate(&a) {
                intra.insert((t.trial, player), rate);
            }
            if let Some(rate) = cooperation_rate(&b) {
                inter.insert((t.trial, player), rate);
            }
        }
    }
    let intra_samples = reduce(&intra, unit);
    let inter_samples = reduce(&inter, unit);
    GroupSplit {
        intra: mean_with_ci(&intra_samples, level).ok(),
        inter: mean_with_ci(&inter_samples, level).ok(),
        intra_samples,
        inter_samples,
    }
}

/// Log-derived answers to the post-match questions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaTruth {
    /// `None` for a match without rounds.
    pub strategy: Option<bool>,
    /// `None` when we never played B before the last round.
    pub behavior: Option<bool>,
    pub own_score: i64,
}

impl MetaTruth {
    pub fn value(&self, question: MetaQuestionId) -> Option<MetaValue> {
        match question {
            MetaQuestionId::Strategy => self.strategy.map(MetaValue::Bool),
            MetaQuestionId::Behavior => self.behavior.map(MetaValue::Bool),
            MetaQuestionId::OwnScore => Some(MetaValue::Int(self.own_score)),
        }
    }
}

/// Ground truth for the meta questions from `perspective`'s side of `record`.
pub fn meta_ground_truth(
    record: &MatchRecord,
    perspective: PlayerId,
    settings: &MetaSettings,
) -> MetaTruth {
    let Some(seat) = record.seat(perspective) else {
        return MetaTruth {
            strategy: None,
            behavior: None,
            own_score: 0,
        };
    };
    let ours: Vec<Action> = record.rounds.iter().map(|r| r.actions[seat]).collect();
    let theirs: Vec<Action> = record.rounds.iter().map(|r| r.actions[1 - seat]).collect();

    let strategy = (!theirs.is_empty()).then(|| {
        let predicted = std::iter::once(Action::A).chain(ours.iter().copied());
        let agreeing = theirs
            .iter()
            .zip(predicted)
            .filter(|(t, p)| *t == p)
            .count();
        agreeing as f64 / theirs.len() as f64 >= settings.strategy_threshold
    });

    let opportunities: Vec<Action> = (1..theirs.len())
        .filter(|&k| ours[k - 1] == Action::B)
        .map(|k| theirs[k])
        .collect();
    let behavior = cooperation_rate(&opportunities).map(|rate| rate > settings.forgiving_threshold);

    MetaTruth {
        strategy,
        behavior,
        own_score: record.score_of(perspective),
    }
}

/// An answer paired with its ground truth (`None`: not scoreable).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredAnswer {
    pub answer: MetaAnswer,
    pub truth: Option<MetaValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaScore {
    pub question: MetaQuestionId,
    pub correct: u32,
    pub total: u32,
    /// `None` when nothing was scoreable.
    pub accuracy: Option<f64>,
}

/// Accuracy per question over scoreable, parsed answers.
pub fn meta_accuracy(items: &[ScoredAnswer]) -> Vec<MetaScore> {
    let mut tally: BTreeMap<MetaQuestionId, (u32, u32)> = BTreeMap::new();
    for item in items {
        let entry = tally.entry(item.answer.question).or_default();
        let Some(truth) = item.truth else { continue };
        if item.answer.unparsed {
            continue;
        }
        entry.1 += 1;
        if item.answer.value == truth {
            entry.0 += 1;
        }
    }
    tally
        .into_iter()
        .map(|(question, (correct, total))| MetaScore {
            question,
            correct,
            total,
            accuracy: (total > 0).then(|| f64::from(correct) / f64::from(total)),
        })
        .collect()
}

/// Meta answers of every trial, paired with truth recomputed from the match records.
pub fn scored_answers(trials: &[TrialLog]) -> Vec<ScoredAnswer> {
    let mut out = Vec::new();
    for t in trials {
        let by_id: BTreeMap<u32, &MatchRecord> =
            t.matches().iter().map(|m| (m.match_id, m)).collect();
        for qa in &t.meta {
            let Some(record) = by_id.get(&qa.match_id) else {
                continue;
            };
            let truth = meta_ground_truth(record, qa.player, &t.config().meta);
            out.extend(qa.answers.iter().map(|a| ScoredAnswer {
                answer: a.clone(),
                truth: truth.value(a.question),
            }));
        }
    }
    out
}
