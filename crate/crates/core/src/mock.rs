//! Deterministic chat-completion server for tests and offline runs.
//!
//! Replies depend only on the prompt text: moves follow tit-for-tat on the
//! match history shown in the prompt, plans and critiques are fixed strings,
//! and meta questions are answered `true` (numeric questions get the score
//! summed from the history lines). Optional fault injection fails the first
//! requests with a server error and delays every reply.

use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::{json, Value};
use tiny_http::{Header, Method, Response, Server};

use crate::client::{CHAT_PATH, MODELS_PATH};

pub const MOCK_PLAN: &str =
    "Open each match with action_a, then repeat the opponent's previous action.";
pub const MOCK_FEEDBACK: &str =
    "The plan is simple and robust. Consider ending matches early against players who keep choosing action_b.";

#[derive(Clone, Debug, Default)]
pub struct MockOptions {
    /// Added before every chat reply.
    pub delay_ms: u64,
    /// Number of initial chat requests answered with `fail_status`.
    pub fail_first: u64,
    /// Status of injected failures; 0 means 500.
    pub fail_status: u16,
    /// Reply with this content instead of the computed one.
    pub fixed_reply: Option<String>,
}

struct Shared {
    options: MockOptions,
    chat_requests: AtomicU64,
    stopping: AtomicBool,
}

pub struct MockServer {
    addr: SocketAddr,
    server: Arc<Server>,
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and serves in the background.
    pub fn start(addr: &str, options: MockOptions) -> io::Result<MockServer> {
        let server = Arc::new(Server::http(addr).map_err(io::Error::other)?);
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("mock server needs an IP address"))?;
        let shared = Arc::new(Shared {
            options,
            chat_requests: AtomicU64::new(0),
            stopping: AtomicBool::new(false),
        });
        let handle = {
            let server = Arc::clone(&server);
            let shared = Arc::clone(&shared);
            thread::spawn(move || {
                for request in server.incoming_requests() {
                    if shared.stopping.load(Ordering::SeqCst) {
                        break;
                    }
                    let shared = Arc::clone(&shared);
                    thread::spawn(move || handle(request, &shared));
                }
            })
        };
        Ok(MockServer {
            addr: local,
            server,
            shared,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Chat requests received so far, including failed ones.
    pub fn chat_requests(&self) -> u64 {
        self.shared.chat_requests.load(Ordering::SeqCst)
    }

    /// Blocks serving requests until the process ends.
    pub fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shared.stopping.store(true, Ordering::SeqCst);
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn json_response(status: u16, body: &Value) -> Response<io::Cursor<Vec<u8>>> {
    Response::from_string(body.to_string())
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"))
}

fn handle(mut request: tiny_http::Request, shared: &Shared) {
    let path = request.url().split('?').next().unwrap_or("").to_string();
    let response = match (request.method(), path.as_str()) {
        (Method::Get, MODELS_PATH) => json_response(
            200,
            &json!({"object": "list", "data": [{"id": "mock", "object": "model"}]}),
        ),
        (Method::Post, CHAT_PATH) => {
            let n = shared.chat_requests.fetch_add(1, Ordering::SeqCst);
            let mut body = String::new();
            let _ = request.as_reader().read_to_string(&mut body);
            if shared.options.delay_ms > 0 {
                thread::sleep(Duration::from_millis(shared.options.delay_ms));
            }
            if n < shared.options.fail_first {
                json_response(
                    if shared.options.fail_status == 0 {
                        500
                    } else {
                        shared.options.fail_status
                    },
                    &json!({"error": "injected failure"}),
                )
            } else {
                chat_response(&body, &shared.options)
            }
        }
        _ => json_response(404, &json!({"error": "not found"})),
    };
    let _ = request.respond(response);
}

fn chat_response(body: &str, options: &MockOptions) -> Response<io::Cursor<Vec<u8>>> {
    let Ok(request) = serde_json::from_str::<Value>(body) else {
        return json_response(400, &json!({"error": "invalid json"}));
    };
    let prompt = request
        .pointer("/messages/0/content")
        .and_then(Value::as_str)
        .unwrap_or_default();
    let model = request
        .get("model")
        .and_then(Value::as_str)
        .unwrap_or("mock");
    let content = options
        .fixed_reply
        .clone()
        .unwrap_or_else(|| reply_for(prompt));
    json_response(
        200,
        &json!({
            "id": "mock",
            "object": "chat.completion",
            "created": 0,
            "model": model,
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": content},
                "finish_reason": "stop"
            }]
        }),
    )
}

fn instructions(prompt: &str) -> &str {
    prompt
        .rfind("Output Instructions:")
        .map(|i| &prompt[i..])
        .unwrap_or(prompt)
}

/// The deterministic reply for `prompt`.
pub fn reply_for(prompt: &str) -> String {
    let tail = instructions(prompt);
    if tail.contains("\"answers\"") {
        let answers: Vec<Value> = tail
            .lines()
            .filter(|l| {
                let digits = l.chars().take_while(char::is_ascii_digit).count();
                digits > 0 && l[digits..].starts_with(". ")
            })
            .map(|q| {
                if q.contains("total score") {
                    json!(own_points(prompt))
                } else {
                    json!(true)
                }
            })
            .collect();
        fenced(&json!({ "answers": answers }))
    } else if tail.contains("\"feedback\"") {
        fenced(&json!({ "feedback": MOCK_FEEDBACK }))
    } else if tail.contains("\"plan\"") {
        fenced(&json!({ "plan": MOCK_PLAN }))
    } else {
        let last = prompt.lines().rfind(|l| l.starts_with("Round "));
        let action = match last {
            Some(line) if line.contains("opponent chose action_b") => "action_b",
            _ => "action_a",
        };
        format!(
            "<think>Look at the last round of this match.</think>\n{}",
            fenced(&json!({
                "action": action,
                "end_match": false,
                "reasoning": "Repeat the opponent's previous action."
            }))
        )
    }
}

fn fenced(value: &Value) -> String {
    format!("```json\n{value}\n```")
}

fn own_points(prompt: &str) -> i64 {
    prompt
        .lines()
        .filter_map(|l| {
            let score = l.split("Score: ").nth(1)?;
            let own = score.split(" for you").next()?;
            own.trim().parse::<i64>().ok()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn move_reply_follows_last_round() {
        let prompt = "Match History:\nRound 1: You chose action_a, opponent chose action_b. Score: +0 for you, +5 for opponent\n\nOutput Instructions:\n{\"action\": ...}";
        assert!(reply_for(prompt).contains("\"action\":\"action_b\""));
        assert!(reply_for("Output Instructions:\n{\"action\"}").contains("\"action\":\"action_a\""));
    }

    #[test]
    fn meta_reply_counts_questions() {
        let prompt = "Round 1: You chose action_b, opponent chose action_a. Score: +5 for you, +0 for opponent\n\
                      Round 2: You chose action_b, opponent chose action_b. Score: +1 for you, +1 for opponent\n\
                      Output Instructions:\n1. Does it?\n2. Is it?\n3. What is your total score in this match?\n{\"answers\": [...]}";
        assert!(reply_for(prompt).contains("[true,true,6]"));
    }
}
