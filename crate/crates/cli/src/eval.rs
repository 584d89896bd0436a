//! Thin client for an external text-completion endpoint.

use std::path::PathBuf;
use std::time::Duration;

use clap::Args;
use serde_json::{json, Value};

use crate::{Failure, Outcome};

/// Environment variable holding the bearer token.
pub const TOKEN_VAR: &str = "SMISELECT_API_TOKEN";

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    prompt_file: PathBuf,
    #[arg(long)]
    endpoint_url: String,
    #[arg(long, default_value_t = 64)]
    max_tokens: u32,
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
}

/// Pulls the completion out of common response shapes, falling back to the raw body.
fn completion_text(body: &str) -> String {
    let Ok(v) = serde_json::from_str::<Value>(body) else {
        return body.to_owned();
    };
    let candidates = [
        v.get("completion"),
        v.get("text"),
        v.pointer("/choices/0/text"),
        v.pointer("/choices/0/message/content"),
    ];
    let found = candidates
        .into_iter()
        .flatten()
        .find_map(Value::as_str)
        .map(str::to_owned);
    found.unwrap_or_else(|| body.to_owned())
}

pub fn run(a: EvalArgs) -> Outcome {
    let prompt = std::fs::read_to_string(&a.prompt_file)
        .map_err(|e| Failure::new("io", format!("{}: {e}", a.prompt_file.display())))?;
    let token = std::env::var(TOKEN_VAR).map_err(|_| Failure::new("auth", format!("{TOKEN_VAR} is not set")))?;
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(a.timeout_secs))
        .build()
        .map_err(|e| Failure::new("network", e.to_string()))?;
    let payload = json!({ "prompt": prompt, "max_tokens": a.max_tokens });
    let send = || {
        client
            .post(&a.endpoint_url)
            .bearer_auth(&token)
            .json(&payload)
            .send()
            .and_then(|r| r.error_for_status())
    };
    // One retry, for transport errors and server-side failures only.
    let response = match send() {
        Err(e) if e.status().is_none_or(|s| s.is_server_error()) => send(),
        other => other,
    }
    .map_err(|e| Failure::new("network", e.to_string()))?;
    let body = response.text().map_err(|e| Failure::new("network", e.to_string()))?;
    println!("{}", completion_text(&body));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::completion_text;

    #[test]
    fn extracts_known_shapes() {
        assert_eq!(completion_text(r#"{"completion":"a"}"#), "a");
        assert_eq!(completion_text(r#"{"choices":[{"text":"b"}]}"#), "b");
        assert_eq!(completion_text(r#"{"choices":[{"message":{"content":"c"}}]}"#), "c");
        assert_eq!(completion_text("plain"), "plain");
        assert_eq!(completion_text(r#"{"other":1}"#), r#"{"other":1}"#);
    }
}
