mod support;

use std::io::Write;

use supercoop::client::ModelExchange;
use supercoop::log::{
    parse_events, read_events, read_exchanges, replay, EventBody, EventLog, LogError,
};
use supercoop::prompt::PromptKind;
use supercoop::PlayerId;
use support::{random_config, run_scripted, tft_vs_ad};

#[test]
fn replay_rebuilds_the_final_state() {
    for seed in 0..30 {
        let config = random_config(seed);
        let (state, events) = run_scripted(&config);
        let replayed = replay(&events).unwrap();
        assert!(replayed.complete);
        assert_eq!(replayed.state, state, "seed {seed}");
    }
}

#[test]
fn log_lines_round_trip() {
    let (_, events) = run_scripted(&random_config(3));
    let text: String = events
        .iter()
        .map(|e| serde_json::to_string(e).unwrap() + "\n")
        .collect();
    assert_eq!(parse_events(&text).unwrap(), events);
}

#[test]
fn tampered_payoff_is_rejected() {
    let (_, mut events) = run_scripted(&tft_vs_ad_short());
    let payoff = events
        .iter_mut()
        .find_map(|e| match &mut e.body {
            EventBody::Payoff { payoffs, .. } => Some(payoffs),
            _ => None,
        })
        .unwrap();
    payoff[0] += 1;
    let err = replay(&events).unwrap_err();
    assert!(matches!(err, LogError::Replay { .. }), "{err}");
}

#[test]
fn tampered_budget_is_rejected() {
    let (_, mut events) = run_scripted(&tft_vs_ad_short());
    for e in &mut events {
        if let EventBody::Payoff {
            remaining_budget, ..
        } = &mut e.body
        {
            remaining_budget[1] += 1;
            break;
        }
    }
    assert!(replay(&events).is_err());
}

fn tft_vs_ad_short() -> supercoop::TournamentConfig {
    let mut c = tft_vs_ad();
    c.budget = 9;
    c
}

#[test]
fn corrupt_line_reports_its_position() {
    let (_, events) = run_scripted(&tft_vs_ad_short());
    let mut text: String = events
        .iter()
        .take(3)
        .map(|e| serde_json::to_string(e).unwrap() + "\n")
        .collect();
    text.push_str("{\"seq\": 3, \"kind\": \"payoff\"\n");
    match parse_events(&text) {
        Err(LogError::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn closed_log_rejects_appends() {
    let mut log = EventLog::in_memory();
    log.append(EventBody::TrialEnd {
        complete: true,
        error: None,
    })
    .unwrap();
    assert!(matches!(
        log.append(EventBody::TrialEnd {
            complete: true,
            error: None
        }),
        Err(LogError::Closed)
    ));
}

#[test]
fn sidecar_is_keyed_by_event_seq() {
    let dir = tempfile::tempdir().unwrap();
    let events_path = dir.path().join("events.jsonl");
    let exchanges_path = dir.path().join("exchanges.jsonl");
    let mut log = EventLog::create(&events_path, &exchanges_path).unwrap();
    for attempt in 1..=3 {
        log.append_exchange(
            PlayerId(attempt),
            ModelExchange {
                purpose: PromptKind::Move,
                attempt,
                request_text: "prompt".into(),
                response_text: Some("reply".into()),
                error: None,
                latency_ms: 1,
                timestamp_ms: 0,
            },
        )
        .unwrap();
    }
    log.append(EventBody::TrialEnd {
        complete: true,
        error: None,
    })
    .unwrap();
    let events = read_events(&events_path).unwrap();
    let exchanges = read_exchanges(&exchanges_path).unwrap();
    assert_eq!(exchanges.len(), 3);
    for x in &exchanges {
        let e = &events[x.event_seq as usize];
        match &e.body {
            EventBody::ModelExchangeRef {
                player, attempt, ..
            } => {
                assert_eq!(*player, x.player);
                assert_eq!(*attempt, x.exchange.attempt);
            }
            other => panic!("sidecar points at {other:?}"),
        }
    }
    assert!(exchanges
        .windows(2)
        .all(|w| w[0].logged_at_ms <= w[1].logged_at_ms));
}

#[test]
fn file_log_matches_memory_log() {
    let dir = tempfile::tempdir().unwrap();
    let (_, events) = run_scripted(&random_config(11));
    let path = dir.path().join("events.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    for e in &events {
        writeln!(f, "{}", serde_json::to_string(e).unwrap()).unwrap();
    }
    assert_eq!(read_events(&path).unwrap(), events);
}
