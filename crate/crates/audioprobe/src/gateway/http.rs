//! Live chat-completions client with bounded retries.
//!
//! Audio attachments ride as a content part carrying base64 WAV plus a
//! format tag. Transient failures (HTTP 429/5xx, timeouts, connection
//! errors) are retried with exponential backoff and full jitter; other
//! 4xx statuses are never retried.

use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use rand::Rng as _;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{AuditRequest, GatewayError, ModelEndpoint, ModelResponse, TokenUsage, Transport};

/// Exponential backoff with full jitter: sleep a uniform random duration in
/// `[0, min(cap, base * factor^attempt)]`.
#[derive(Debug, Clone, Copy)]
pub struct BackoffPolicy {
    pub base: Duration,
    pub factor: f64,
    pub cap: Duration,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            factor: 2.0,
            cap: Duration::from_secs(60),
        }
    }
}

impl BackoffPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let exp = self.base.as_secs_f64() * self.factor.powi(attempt as i32);
        let ceiling = exp.min(self.cap.as_secs_f64());
        let jittered = rand::rng().random_range(0.0..=ceiling);
        Duration::from_secs_f64(jittered)
    }
}

pub struct HttpGateway {
    client: reqwest::Client,
    backoff: BackoffPolicy,
}

impl Default for HttpGateway {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpGateway {
    pub fn new() -> Self {
        Self::with_backoff(BackoffPolicy::default())
    }

    pub fn with_backoff(backoff: BackoffPolicy) -> Self {
        Self {
            client: reqwest::Client::new(),
            backoff,
        }
    }

    /// Send one request and return the model's first message text.
    pub async fn query(
        &self,
        endpoint: &ModelEndpoint,
        request: &AuditRequest,
    ) -> Result<ModelResponse, GatewayError> {
        // Both preconditions fail before any network traffic.
        if request.bundle.audio_path.is_some() && !endpoint.audio_capable {
            return Err(GatewayError::AudioNotSupported {
                model_id: endpoint.model_id.clone(),
            });
        }
        let bearer = match &endpoint.auth_env {
            Some(env_var) => Some(std::env::var(env_var).map_err(|_| GatewayError::AuthMissing {
                env_var: env_var.clone(),
            })?),
            None => None,
        };

        let body = build_body(endpoint, request)?;
        let url = format!(
            "{}/chat/completions",
            endpoint.base_url.trim_end_matches('/')
        );
        let timeout = Duration::from_secs(endpoint.request_timeout_secs);

        let started = Instant::now();
        let mut attempt: u32 = 0;
        loop {
            let last_status: Option<u16>;
            let mut builder = self.client.post(&url).json(&body).timeout(timeout);
            if let Some(token) = &bearer {
                builder = builder.bearer_auth(token);
            }
            match builder.send().await {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        let payload: Value = response.json().await.map_err(|err| {
                            GatewayError::MalformedResponse {
                                message: err.to_string(),
                            }
                        })?;
                        let (raw_text, token_usage) = parse_completion(&payload)?;
                        return Ok(ModelResponse {
                            item_id: request.item_id.clone(),
                            condition: request.condition,
                            model_id: endpoint.model_id.clone(),
                            raw_text,
                            latency_ms: started.elapsed().as_millis() as u64,
                            token_usage,
                            created_at_ms: epoch_ms(),
                            transport: Transport::Live,
                            retries: attempt,
                        });
                    }
                    let code = status.as_u16();
                    let retryable = code == 429 || status.is_server_error();
                    if !retryable {
                        let text = response.text().await.unwrap_or_default();
                        return Err(GatewayError::HttpStatus {
                            status: code,
                            body: truncate(&text, 512),
                        });
                    }
                    last_status = Some(code);
                }
                Err(err) => {
                    // Timeouts and connection errors are transient.
                    if !(err.is_timeout() || err.is_connect() || err.is_request()) {
                        return Err(GatewayError::MalformedResponse {
                            message: err.to_string(),
                        });
                    }
                    last_status = None;
                }
            }
            if attempt >= endpoint.max_retries {
                return Err(GatewayError::ExhaustedRetries {
                    last_status,
                    attempts: attempt + 1,
                });
            }
            tokio::time::sleep(self.backoff.delay(attempt)).await;
            attempt += 1;
        }
    }
}

fn epoch_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn truncate(text: &str, max: usize) -> String {
    if text.len() <= max {
        text.to_string()
    } else {
        let mut end = max;
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &text[..end])
    }
}

fn build_body(endpoint: &ModelEndpoint, request: &AuditRequest) -> Result<Value, GatewayError> {
    let bundle = &request.bundle;
    let mut user_parts = vec![json!({"type": "text", "text": bundle.user_text})];
    if let Some(path) = &bundle.audio_path {
        let bytes = std::fs::read(path).map_err(|err| GatewayError::AudioRead {
            path: path.display().to_string(),
            message: err.to_string(),
        })?;
        user_parts.push(json!({
            "type": "input_audio",
            "input_audio": {"data": BASE64.encode(bytes), "format": "wav"},
        }));
    }
    let temperature = endpoint
        .temperature_override
        .unwrap_or(bundle.decode.temperature);
    Ok(json!({
        "model": endpoint.model_id,
        "messages": [
            {"role": "system", "content": bundle.system_text},
            {"role": "user", "content": user_parts},
        ],
        "temperature": temperature,
        "max_tokens": bundle.decode.max_tokens,
    }))
}

#[derive(Deserialize)]
struct UsagePayload {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

fn parse_completion(payload: &Value) -> Result<(String, Option<TokenUsage>), GatewayError> {
    let content = payload
        .pointer("/choices/0/message/content")
        .ok_or_else(|| GatewayError::MalformedResponse {
            message: "missing choices[0].message.content".into(),
        })?;
    let raw_text = match content {
        Value::String(text) => text.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|part| part.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        _ => {
            return Err(GatewayError::MalformedResponse {
                message: "content is neither text nor parts".into(),
            })
        }
    };
    let token_usage = payload
        .get("usage")
        .and_then(|usage| serde_json::from_value::<UsagePayload>(usage.clone()).ok())
        .map(|usage| TokenUsage {
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        });
    Ok((raw_text, token_usage))
}
