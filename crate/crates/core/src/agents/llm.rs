//! Chat-completion transport for external-endpoint policies.
//!
//! Speaks the industry-standard JSON shape (messages in, choices out) over
//! HTTP with bounded retries, exponential backoff, and a per-call timeout.
//! Responses must be strict JSON actions; any deviation becomes the
//! engine's no-op substitution, flagged in the record. Transport failures
//! never touch market state.

use super::prompt::{render_buyer_prompt, render_firm_prompt, BestStep, PromptTemplate};
use crate::crash::{CrashConfig, FirmAction};
use crate::engine::record::LlmUsage;
use crate::engine::{Action, Observation, Policy, PolicyError};
use crate::lemon::BuyerAction;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::time::Duration;

/// Transport and decoding settings, from the config file's `llm` section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub timeout_secs: u64,
    /// Retries after the first attempt.
    pub retries: u32,
    pub backoff_ms: u64,
    /// Max concurrent in-flight requests when the engine fans out.
    pub parallelism: usize,
    /// Optional raw assistant prefill passed through to the endpoint.
    pub raw_prefill: Option<String>,
    /// Optional directory of prompt template overrides.
    pub prompts: Option<String>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080/v1/chat/completions".into(),
            model: "local-model".into(),
            api_key_env: "AGORA_API_KEY".into(),
            max_tokens: 1000,
            temperature: 0.0,
            timeout_secs: 30,
            retries: 2,
            backoff_ms: 500,
            parallelism: 1,
            raw_prefill: None,
            prompts: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("request failed after {attempts} attempts: {detail}")]
    Exhausted { attempts: u32, detail: String },
    #[error("endpoint returned malformed completion payload: {0}")]
    BadPayload(String),
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: String,
}

#[derive(Debug, Default, Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Blocking chat-completion client with bounded retries.
pub struct ChatTransport {
    config: LlmConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl ChatTransport {
    pub fn new(config: LlmConfig) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .expect("client builds");
        let api_key = std::env::var(&config.api_key_env).ok();
        Self {
            config,
            client,
            api_key,
        }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    /// One prompt in, raw completion text and token usage out.
    pub fn complete(&self, prompt: &str) -> Result<(String, LlmUsage), TransportError> {
        let mut messages = vec![json!({"role": "user", "content": prompt})];
        if let Some(prefill) = &self.config.raw_prefill {
            messages.push(json!({"role": "assistant", "content": prefill}));
        }
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "max_tokens": self.config.max_tokens,
            "temperature": self.config.temperature,
        });

        let attempts = self.config.retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self.config.backoff_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            let mut request = self
                .client
                .post(&self.config.endpoint)
                .header("content-type", "application/json");
            if let Some(key) = &self.api_key {
                request = request.header("authorization", format!("Bearer {key}"));
            }
            match request.json(&body).send() {
                Ok(response) => {
                    let status = response.status();
                    if !status.is_success() {
                        last_error = format!("http status {status}");
                        continue;
                    }
                    let payload: ChatResponse = match response.json() {
                        Ok(p) => p,
                        Err(e) => return Err(TransportError::BadPayload(e.to_string())),
                    };
                    let usage = payload.usage.unwrap_or_default();
                    let content = payload
                        .choices
                        .into_iter()
                        .next()
                        .map(|c| c.message.content)
                        .ok_or_else(|| TransportError::BadPayload("empty choices list".into()))?;
                    return Ok((
                        content,
                        LlmUsage {
                            prompt_tokens: usage.prompt_tokens,
                            completion_tokens: usage.completion_tokens,
                        },
                    ));
                }
                Err(e) => {
                    last_error = e.to_string();
                }
            }
        }
        Err(TransportError::Exhausted {
            attempts,
            detail: last_error,
        })
    }
}

/// Strip an optional markdown code fence around a JSON reply.
fn strip_fence(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(inner) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let inner = inner.strip_prefix("json").unwrap_or(inner);
    let inner = inner.strip_suffix("```").unwrap_or(inner);
    inner.trim()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CrashActionJson {
    price: f64,
    buy: BTreeMap<String, i64>,
}

/// Strict firm-action decode: a JSON object with a strictly positive finite
/// price and a single-good integer buy map.
pub fn parse_firm_action(text: &str) -> Result<FirmAction, String> {
    let parsed: CrashActionJson = serde_json::from_str(strip_fence(text))
        .map_err(|e| format!("action is not valid JSON for the firm schema: {e}"))?;
    if !parsed.price.is_finite() || parsed.price <= 0.0 {
        return Err(format!(
            "price must be strictly positive, got {}",
            parsed.price
        ));
    }
    if parsed.buy.len() != 1 {
        return Err(format!(
            "buy map must name exactly one good, got {} entries",
            parsed.buy.len()
        ));
    }
    let quantity = *parsed.buy.values().next().expect("one entry");
    if quantity < 0 {
        return Err(format!("buy quantity must be >= 0, got {quantity}"));
    }
    Ok(FirmAction {
        price: parsed.price,
        buy_quantity: quantity as u64,
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LemonActionJson {
    decision: String,
    #[serde(default)]
    listing_id: Option<String>,
}

/// Strict buyer-action decode: `{"decision": "bid", "listing_id": ...}` or
/// `{"decision": "pass"}`.
pub fn parse_buyer_action(text: &str) -> Result<BuyerAction, String> {
    let parsed: LemonActionJson = serde_json::from_str(strip_fence(text))
        .map_err(|e| format!("action is not valid JSON for the buyer schema: {e}"))?;
    match parsed.decision.as_str() {
        "pass" => {
            if parsed.listing_id.is_some() {
                return Err("pass must not carry a listing_id".into());
            }
            Ok(BuyerAction::Pass)
        }
        "bid" => {
            let listing_id = parsed
                .listing_id
                .ok_or_else(|| "bid requires a listing_id".to_string())?;
            Ok(BuyerAction::Bid { listing_id })
        }
        other => Err(format!(
            "decision must be \"bid\" or \"pass\", got {other:?}"
        )),
    }
}

/// Composite reflection score for one historical step: normalized step
/// profit plus normalized market-health proxy (alive-firm fraction), equal
/// weights.
fn reflection_scores(entries: &[(usize, f64, f64, String)]) -> Vec<BestStep> {
    if entries.is_empty() {
        return Vec::new();
    }
    let (min_profit, max_profit) = entries.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY),
        |(lo, hi), (_, profit, _, _)| (lo.min(*profit), hi.max(*profit)),
    );
    let norm_profit = |p: f64| {
        if max_profit > min_profit {
            (p - min_profit) / (max_profit - min_profit)
        } else {
            0.5
        }
    };
    let mut scored: Vec<BestStep> = entries
        .iter()
        .map(|(step, profit, health, summary)| BestStep {
            step: *step,
            score: norm_profit(*profit) + health,
            summary: summary.clone(),
        })
        .collect();
    scored.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("scores finite"));
    scored
}

/// Firm policy backed by an external endpoint, with best-step reflection.
pub struct LlmFirmPolicy {
    transport: ChatTransport,
    template: PromptTemplate,
    n_firms: usize,
    step: usize,
    /// (step, profit, health proxy, summary) per past step.
    reflection: Vec<(usize, f64, f64, String)>,
    usage: Option<LlmUsage>,
}

impl LlmFirmPolicy {
    pub fn new(config: LlmConfig, template: PromptTemplate, crash: &CrashConfig) -> Self {
        Self {
            transport: ChatTransport::new(config),
            template,
            n_firms: crash.n_firms,
            step: 0,
            reflection: Vec::new(),
            usage: None,
        }
    }
}

impl Policy for LlmFirmPolicy {
    fn kind(&self) -> &'static str {
        "external_llm"
    }

    fn act(&mut self, obs: &Observation, _rng: &mut ChaCha8Rng) -> Result<Action, PolicyError> {
        let o = match obs {
            Observation::Crash(o) => o,
            Observation::Lemon(_) => {
                return Err(PolicyError::Malformed(
                    "firm policy received a buyer observation".into(),
                ))
            }
        };
        // Fold the newest history entry into the reflection log.
        if let Some(latest) = o.history.last() {
            let profit = latest.revenue - latest.expenses;
            let alive_fraction =
                (o.competitor_prices.len() + 1) as f64 / self.n_firms.max(1) as f64;
            let summary = format!(
                "Price ${:.2}, sold {}, profit ${:.2}",
                latest.price_set, latest.units_sold, profit
            );
            let step = self.step.saturating_sub(1);
            self.reflection
                .push((step, profit, alive_fraction, summary));
        }
        let best = reflection_scores(&self.reflection);
        let prompt = render_firm_prompt(&self.template, o, self.step, &best)
            .map_err(|e| PolicyError::Malformed(e.to_string()))?;
        self.step += 1;
        let (text, usage) = self
            .transport
            .complete(&prompt)
            .map_err(|e| PolicyError::Transport(e.to_string()))?;
        self.usage = Some(usage);
        let action = parse_firm_action(&text).map_err(PolicyError::Malformed)?;
        Ok(Action::Crash(action))
    }

    fn take_usage(&mut self) -> Option<LlmUsage> {
        self.usage.take()
    }
}

/// Buyer policy backed by an external endpoint.
pub struct LlmBuyerPolicy {
    transport: ChatTransport,
    template: PromptTemplate,
    step: usize,
    usage: Option<LlmUsage>,
}

impl LlmBuyerPolicy {
    pub fn new(config: LlmConfig, template: PromptTemplate) -> Self {
        Self {
            transport: ChatTransport::new(config),
            template,
            step: 0,
            usage: None,
        }
    }
}

impl Policy for LlmBuyerPolicy {
    fn kind(&self) -> &'static str {
        "external_llm"
    }

    fn act(&mut self, obs: &Observation, _rng: &mut ChaCha8Rng) -> Result<Action, PolicyError> {
        let o = match obs {
            Observation::Lemon(o) => o,
            Observation::Crash(_) => {
                return Err(PolicyError::Malformed(
                    "buyer policy received a firm observation".into(),
                ))
            }
        };
        let prompt = render_buyer_prompt(&self.template, o, self.step)
            .map_err(|e| PolicyError::Malformed(e.to_string()))?;
        self.step += 1;
        let (text, usage) = self
            .transport
            .complete(&prompt)
            .map_err(|e| PolicyError::Transport(e.to_string()))?;
        self.usage = Some(usage);
        let action = parse_buyer_action(&text).map_err(PolicyError::Malformed)?;
        Ok(Action::Lemon(action))
    }

    fn take_usage(&mut self) -> Option<LlmUsage> {
        self.usage.take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// Minimal canned-response HTTP server for transport tests.
    fn serve_responses(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<u32>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut served = 0u32;
            for (status, body) in responses {
                let Ok((mut stream, _)) = listener.accept() else {
                    break;
                };
                // Read request until the end of headers, then the body.
                let mut buf = vec![0u8; 65536];
                let mut total = 0;
                loop {
                    let n = stream.read(&mut buf[total..]).unwrap_or(0);
                    if n == 0 {
                        break;
                    }
                    total += n;
                    let text = String::from_utf8_lossy(&buf[..total]);
                    if let Some(header_end) = text.find("\r\n\r\n") {
                        let content_length = text
                            .lines()
                            .find_map(|l| {
                                l.to_ascii_lowercase()
                                    .strip_prefix("content-length:")
                                    .map(|v| v.trim().parse::<usize>().unwrap_or(0))
                            })
                            .unwrap_or(0);
                        if total >= header_end + 4 + content_length {
                            break;
                        }
                    }
                }
                let reason = if status == 200 { "OK" } else { "Error" };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\n\
                     content-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(response.as_bytes()).unwrap();
                served += 1;
            }
            served
        });
        (format!("http://{addr}/v1/chat/completions"), handle)
    }

    fn completion_body(content: &str) -> String {
        serde_json::to_string(&serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 5}
        }))
        .unwrap()
    }

    fn test_config(endpoint: String) -> LlmConfig {
        LlmConfig {
            endpoint,
            retries: 1,
            backoff_ms: 5,
            timeout_secs: 5,
            ..LlmConfig::default()
        }
    }

    #[test]
    fn transport_parses_completion_and_usage() {
        let (endpoint, server) = serve_responses(vec![(
            200,
            completion_body(r#"{"price": 2.5, "buy": {"food": 6}}"#),
        )]);
        let transport = ChatTransport::new(test_config(endpoint));
        let (text, usage) = transport.complete("hello").unwrap();
        let action = parse_firm_action(&text).unwrap();
        assert_eq!(
            action,
            FirmAction {
                price: 2.5,
                buy_quantity: 6
            }
        );
        assert_eq!(usage.prompt_tokens, 12);
        assert_eq!(usage.completion_tokens, 5);
        server.join().unwrap();
    }

    #[test]
    fn transport_exhausts_retries_on_server_errors() {
        let (endpoint, server) = serve_responses(vec![(500, "{}".into()), (500, "{}".into())]);
        let transport = ChatTransport::new(test_config(endpoint));
        let err = transport.complete("hello").unwrap_err();
        match err {
            TransportError::Exhausted { attempts, .. } => assert_eq!(attempts, 2),
            other => panic!("unexpected error {other:?}"),
        }
        assert_eq!(server.join().unwrap(), 2);
    }

    #[test]
    fn transport_retries_then_succeeds() {
        let (endpoint, server) = serve_responses(vec![
            (500, "{}".into()),
            (200, completion_body(r#"{"decision": "pass"}"#)),
        ]);
        let transport = ChatTransport::new(test_config(endpoint));
        let (text, _) = transport.complete("hello").unwrap();
        assert_eq!(parse_buyer_action(&text).unwrap(), BuyerAction::Pass);
        server.join().unwrap();
    }

    #[test]
    fn firm_schema_rejects_nonpositive_price() {
        let err = parse_firm_action(r#"{"price": -1.0, "buy": {"good": 2}}"#).unwrap_err();
        assert!(err.contains("strictly positive"));
        let err = parse_firm_action(r#"{"price": 0.0, "buy": {"good": 2}}"#).unwrap_err();
        assert!(err.contains("strictly positive"));
    }

    #[test]
    fn firm_schema_rejects_unknown_fields_and_bad_maps() {
        assert!(parse_firm_action(r#"{"price": 1.0, "buy": {"good": 2}, "note": "x"}"#).is_err());
        assert!(parse_firm_action(r#"{"price": 1.0, "buy": {}}"#).is_err());
        assert!(parse_firm_action(r#"{"price": 1.0, "buy": {"a": 1, "b": 2}}"#).is_err());
        assert!(parse_firm_action(r#"{"price": 1.0, "buy": {"good": -3}}"#).is_err());
    }

    #[test]
    fn firm_schema_accepts_fenced_json() {
        let action =
            parse_firm_action("```json\n{\"price\": 1.5, \"buy\": {\"good\": 4}}\n```").unwrap();
        assert_eq!(action.buy_quantity, 4);
    }

    #[test]
    fn buyer_schema_covers_both_decisions() {
        assert_eq!(
            parse_buyer_action(r#"{"decision": "pass"}"#).unwrap(),
            BuyerAction::Pass
        );
        assert_eq!(
            parse_buyer_action(r#"{"decision": "bid", "listing_id": "l7"}"#).unwrap(),
            BuyerAction::Bid {
                listing_id: "l7".into()
            }
        );
        assert!(parse_buyer_action(r#"{"decision": "bid"}"#).is_err());
        assert!(parse_buyer_action(r#"{"decision": "hold"}"#).is_err());
        assert!(parse_buyer_action(r#"{"decision": "pass", "listing_id": "x"}"#).is_err());
    }
}
