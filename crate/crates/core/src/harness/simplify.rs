//! Prompt simplification through an external chat-completion endpoint.
//!
//! Only the request/response shapes live here; the transport is supplied by
//! the caller through [`CompletionClient`]. Nothing in the crate calls it
//! implicitly.

use serde_json::{json, Value};

use crate::error::{PeoError, Result};
use crate::harness::prompts::{PromptOrigin, PromptSet};

pub const SIMPLIFY_QUERY: &str =
    "Given the following list of prompts, make them short, focus on the main subject of the prompt.";

/// Sends an OpenAI-compatible chat request body and returns the response body.
pub trait CompletionClient {
    fn complete(&self, request: &Value) -> Result<Value>;
}

/// The user message: the query, then one prompt per line, numbered.
pub fn simplify_message(prompts: &[String]) -> String {
    let mut msg = String::from(SIMPLIFY_QUERY);
    msg.push('\n');
    for (i, p) in prompts.iter().enumerate() {
        msg.push_str(&format!("\n{}. {}", i + 1, p));
    }
    msg
}

pub fn simplify_request(model: &str, prompts: &[String]) -> Value {
    json!({
        "model": model,
        "temperature": 0,
        "messages": [
            {"role": "user", "content": simplify_message(prompts)}
        ]
    })
}

/// Strip list markers such as `1.`, `2)`, `-` or `*`.
fn strip_marker(line: &str) -> &str {
    let line = line.trim();
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    let rest = if digits > 0 {
        let after = &line[digits..];
        after
            .strip_prefix('.')
            .or_else(|| after.strip_prefix(')'))
            .unwrap_or(line)
    } else {
        line.strip_prefix("- ")
            .or_else(|| line.strip_prefix("* "))
            .unwrap_or(line)
    };
    rest.trim().trim_matches('"').trim()
}

/// Read the first choice's content and return one simplified prompt per
/// input prompt, in order.
pub fn parse_simplify_response(response: &Value, expected: usize) -> Result<Vec<String>> {
    let content = response
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| {
            PeoError::InvalidInput("completion response has no choices[0].message.content".into())
        })?;
    let lines: Vec<String> = content
        .lines()
        .map(strip_marker)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if lines.len() != expected {
        return Err(PeoError::InvalidInput(format!(
            "expected {expected} simplified prompts, completion returned {}",
            lines.len()
        )));
    }
    Ok(lines)
}

/// Simplify `set` in one request and return it tagged [`PromptOrigin::Simplified`].
pub fn simplify_prompt_set(
    set: &PromptSet,
    model: &str,
    client: &dyn CompletionClient,
) -> Result<PromptSet> {
    let request = simplify_request(model, set.prompts());
    let response = client.complete(&request)?;
    let prompts = parse_simplify_response(&response, set.len())?;
    PromptSet::new(
        format!("{}-simplified", set.name),
        prompts,
        PromptOrigin::Simplified,
    )
}
