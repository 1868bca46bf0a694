//! Extracting the JSON payload from free-form model replies.
//!
//! Replies may wrap the payload in prose, reasoning traces (`<think>` blocks)
//! or markdown fences. Candidates are tried from the end of the reply so the
//! final answer wins over drafts quoted along the way.

use serde_json::{Map, Value};
use thiserror::Error;

use super::PromptKind;
use crate::agents::{MetaQuestion, MetaQuestionId, MetaValue};
use crate::game::Action;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed {kind:?} reply: {reason}")]
pub struct MalformedReply {
    pub kind: PromptKind,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParsedReply {
    Move {
        action: Action,
        end_match: bool,
        rationale: String,
    },
    Plan {
        plan_text: String,
    },
    Critique {
        feedback_text: String,
    },
    Meta {
        answers: Vec<MetaValue>,
    },
}

fn strip_reasoning(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(start) = rest.find("<think>") {
        out.push_str(&rest[..start]);
        match rest[start..].find("</think>") {
            Some(end) => rest = &rest[start + end + "</think>".len()..],
            None => {
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Bodies of markdown code fences, in order of appearance.
fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // skip the info string (e.g. `json`)
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    blocks
}

/// Balanced top-level `{...}` spans, honoring JSON string escapes.
fn brace_objects(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' if depth > 0 => in_string = true,
            b'{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            b'}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    spans.push(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    spans
}

fn candidates(raw: &str) -> Vec<Map<String, Value>> {
    let text = strip_reasoning(raw);
    let mut sources: Vec<String> = fenced_blocks(&text)
        .into_iter()
        .map(str::to_string)
        .collect();
    sources.extend(brace_objects(&text).into_iter().map(str::to_string));
    let mut objects = Vec::new();
    for source in sources.iter().rev() {
        if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(source.trim()) {
            objects.push(map);
        }
    }
    objects
}

fn malformed(kind: PromptKind, reason: impl Into<String>) -> MalformedReply {
    MalformedReply {
        kind,
        reason: reason.into(),
    }
}

fn non_empty_string(map: &Map<String, Value>, key: &str) -> Option<String> {
    match map.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Some(s.trim().to_string()),
        _ => None,
    }
}

fn interpret(kind: PromptKind, map: &Map<String, Value>) -> Result<ParsedReply, String> {
    match kind {
        PromptKind::Move => {
            let action = match map.get("action") {
                Some(Value::String(s)) => {
                    Action::from_token(s).ok_or_else(|| format!("invalid action token {s:?}"))?
                }
                _ => return Err("missing \"action\"".into()),
            };
            let end_match = match map.get("end_match") {
                None | Some(Value::Null) => false,
                Some(Value::Bool(b)) => *b,
                Some(other) => return Err(format!("\"end_match\" must be a boolean, got {other}")),
            };
            let rationale = ["reasoning", "rationale"]
                .iter()
                .find_map(|k| map.get(*k).and_then(Value::as_str))
                .unwrap_or_default()
                .to_string();
            Ok(ParsedReply::Move {
                action,
                end_match,
                rationale,
            })
        }
        PromptKind::Plan => non_empty_string(map, "plan")
            .map(|plan_text| ParsedReply::Plan { plan_text })
            .ok_or_else(|| "missing non-empty \"plan\"".into()),
        PromptKind::Critique => non_empty_string(map, "feedback")
            .map(|feedback_text| ParsedReply::Critique { feedback_text })
            .ok_or_else(|| "missing non-empty \"feedback\"".into()),
        PromptKind::Meta => {
            let Some(Value::Array(items)) = map.get("answers") else {
                return Err("missing \"answers\" array".into());
            };
            let answers = items
                .iter()
                .map(|v| match v {
                    Value::Bool(b) => Ok(MetaValue::Bool(*b)),
                    Value::Number(n) => n
                        .as_i64()
                        .map(MetaValue::Int)
                        .ok_or_else(|| format!("answer {n} is not an integer")),
                    other => Err(format!("answer {other} is neither boolean nor integer")),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ParsedReply::Meta { answers })
        }
    }
}

/// Extracts the structured payload of a `kind` reply.
pub fn parse_reply(kind: PromptKind, raw: &str) -> Result<ParsedReply, MalformedReply> {
    let objects = candidates(raw);
    if objects.is_empty() {
        return Err(malformed(kind, "no JSON object found"));
    }
    let mut first_error = None;
    for map in &objects {
        match interpret(kind, map) {
            Ok(parsed) => return Ok(parsed),
            Err(reason) => {
                first_error.get_or_insert(reason);
            }
        }
    }
    Err(malformed(kind, first_error.unwrap_or_default()))
}

/// Parses a meta reply and checks it answers every question with the right type.
pub fn parse_meta_reply(
    raw: &str,
    questions: &[MetaQuestion],
) -> Result<Vec<MetaValue>, MalformedReply> {
    let ParsedReply::Meta { answers } = parse_reply(PromptKind::Meta, raw)? else {
        unreachable!("meta parse yields meta reply")
    };
    if answers.len() != questions.len() {
        return Err(malformed(
            PromptKind::Meta,
            format!(
                "expected {} answers, got {}",
                questions.len(),
                answers.len()
            ),
        ));
    }
    for (q, a) in questions.iter().zip(&answers) {
        let ok = match q.id {
            MetaQuestionId::Strategy | MetaQuestionId::Behavior => matches!(a, MetaValue::Bool(_)),
            MetaQuestionId::OwnScore => matches!(a, MetaValue::Int(_)),
        };
        if !ok {
            return Err(malformed(
                PromptKind::Meta,
                format!("answer {a:?} has the wrong type for {:?}", q.id),
            ));
        }
    }
    Ok(answers)
}
