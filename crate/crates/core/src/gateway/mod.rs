//! Model responses: a chat-completions client with bounded concurrency and a
//! gold-derived simulator.

pub mod simulate;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

pub use simulate::{simulate_response, CorruptionProfile};

pub const ENV_ENDPOINT: &str = "FOODSEM_ENDPOINT";
pub const ENV_API_KEY: &str = "FOODSEM_API_KEY";
pub const ENV_MODEL: &str = "FOODSEM_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub backoff_base_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub request_timeout_secs: f64,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
}

impl GatewayConfig {
    pub fn new(endpoint_url: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            model_name: "foodsem".into(),
            max_new_tokens: 512,
            temperature: 0.0,
            request_timeout_secs: 120.0,
            max_in_flight: 4,
            retry: RetryPolicy {
                max_attempts: 3,
                backoff_base_secs: 1.0,
            },
            api_key: None,
        }
    }

    /// Endpoint, key and model name from the environment.
    pub fn from_env() -> Result<Self> {
        let url = std::env::var(ENV_ENDPOINT)
            .map_err(|_| Error::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let mut cfg = Self::new(url);
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        if let Ok(model) = std::env::var(ENV_MODEL) {
            cfg.model_name = model;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let url = self.endpoint_url.as_str();
        if !(url.starts_with("http://") || url.starts_with("https://"))
            || url.len() <= "https://".len()
        {
            return Err(Error::Config(format!(
                "endpoint `{url}` is not an http(s) URL"
            )));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        // written so NaN fails too
        let non_negative = |x: f64| x >= 0.0;
        if !non_negative(self.temperature)
            || self.request_timeout_secs.is_nan()
            || self.request_timeout_secs <= 0.0
            || !non_negative(self.retry.backoff_base_secs)
        {
            return Err(Error::Config(
                "temperature, timeout and backoff must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One prompt's outcome; also the transcript line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub instance_id: String,
    pub prompt: String,
    pub response: String,
    pub latency_ms: u64,
    pub attempts: usize,
    /// Set when every attempt failed; the response is then empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport_error: Option<String>,
}

fn request_body(cfg: &GatewayConfig, prompt: &str) -> Value {
    json!({
        "model": cfg.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "max_tokens": cfg.max_new_tokens,
        "temperature": cfg.temperature,
    })
}

fn extract_text(v: &Value) -> Option<String> {
    let choice = v.get("choices")?.get(0)?;
    choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .map(str::to_string)
}

fn send_once(
    agent: &ureq::Agent,
    cfg: &GatewayConfig,
    prompt: &str,
) -> std::result::Result<String, String> {
    let mut req = agent.post(&cfg.endpoint_url);
    if let Some(key) = &cfg.api_key {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let mut resp = req
        .send_json(request_body(cfg, prompt))
        .map_err(|e| e.to_string())?;
    let v: Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
    extract_text(&v).ok_or_else(|| format!("no choices in response: {v}"))
}

fn complete_one(agent: &ureq::Agent, cfg: &GatewayConfig, id: &str, prompt: &str) -> Completion {
    let start = Instant::now();
    let mut last_error = String::new();
    let mut attempts = 0;
    while attempts < cfg.retry.max_attempts {
        if attempts > 0 {
            let wait = cfg.retry.backoff_base_secs * 2f64.powi(attempts as i32 - 1);
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
        attempts += 1;
        match send_once(agent, cfg, prompt) {
            Ok(text) => {
                return Completion {
                    instance_id: id.to_string(),
                    prompt: prompt.to_string(),
                    response: text,
                    latency_ms: start.elapsed().as_millis() as u64,
                    attempts,
                    transport_error: None,
                }
            }
            Err(e) => last_error = e,
        }
    }
    Completion {
        instance_id: id.to_string(),
        prompt: prompt.to_string(),
        response: String::new(),
        latency_ms: start.elapsed().as_millis() as u64,
        attempts,
        transport_error: Some(last_error),
    }
}

/// Complete every `(instance_id, prompt)` with at most `max_in_flight`
/// requests outstanding. Results come back in input order; transport
/// failures become flagged empty responses.
pub fn complete_batch(
    prompts: &[(String, String)],
    cfg: &GatewayConfig,
) -> Result<Vec<Completion>> {
    cfg.validate()?;
    let mut ids = std::collections::HashSet::new();
    if let Some((dup, _)) = prompts.iter().find(|(id, _)| !ids.insert(id.as_str())) {
        return Err(Error::Config(format!(
            "instance `{dup}` appears twice in the batch"
        )));
    }
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(cfg.request_timeout_secs)))
        .build()
        .into();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Completion>>> = Mutex::new(vec![None; prompts.len()]);
    std::thread::scope(|s| {
        for _ in 0..cfg.max_in_flight.min(prompts.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((id, prompt)) = prompts.get(i) else {
                    break;
                };
                let done = complete_one(&agent, cfg, id, prompt);
                results.lock().expect("result slot")[i] = Some(done);
            });
        }
    });
    Ok(results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|c| c.expect("every prompt completed"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    struct Stub {
        url: String,
        peak: Arc<AtomicUsize>,
        hits: Arc<AtomicUsize>,
    }

    /// Minimal HTTP server: answers every POST with `status` and a fixed
    /// completion after `delay`, recording peak concurrency.
    fn stub(status: u16, answer: &'static str, delay: Duration) -> Stub {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!(
            "http://{}/v1/chat/completions",
            listener.local_addr().unwrap()
        );
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let hits = Arc::new(AtomicUsize::new(0));
        let (l2, p2, h2) = (live.clone(), peak.clone(), hits.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let (live, peak, hits) = (l2.clone(), p2.clone(), h2.clone());
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut length = 0;
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        if line == "\r\n" {
                            break;
                        }
                        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                            length = v.trim().parse().unwrap();
                        }
                    }
                    let mut body = vec![0; length];
                    reader.read_exact(&mut body).unwrap();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    hits.fetch_add(1, Ordering::SeqCst);
                    std::thread::sleep(delay);
                    live.fetch_sub(1, Ordering::SeqCst);
                    let payload =
                        json!({"choices": [{"message": {"role": "assistant", "content": answer}}]})
                            .to_string();
                    let reply = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                        payload.len()
                    );
                    let _ = stream.write_all(reply.as_bytes());
                });
            }
        });
        Stub { url, peak, hits }
    }

    fn prompts(n: usize) -> Vec<(String, String)> {
        (0..n)
            .map(|i| (format!("id{i}"), format!("prompt {i}")))
            .collect()
    }

    fn fast(url: &str) -> GatewayConfig {
        let mut cfg = GatewayConfig::new(url);
        cfg.retry.backoff_base_secs = 0.01;
        cfg.request_timeout_secs = 10.0;
        cfg
    }

    #[test]
    fn stub_answers_keep_ids_in_order() {
        let s = stub(200, "Sure: salt - FOODON_1.", Duration::ZERO);
        let out = complete_batch(&prompts(3), &fast(&s.url)).unwrap();
        let ids: Vec<&str> = out.iter().map(|c| c.instance_id.as_str()).collect();
        assert_eq!(ids, ["id0", "id1", "id2"]);
        assert!(out
            .iter()
            .all(|c| c.response == "Sure: salt - FOODON_1." && c.attempts == 1));
    }

    #[test]
    fn failures_become_flagged_empty_responses() {
        let s = stub(500, "", Duration::ZERO);
        let out = complete_batch(&prompts(3), &fast(&s.url)).unwrap();
        assert!(out
            .iter()
            .all(|c| c.response.is_empty() && c.transport_error.is_some() && c.attempts == 3));
        assert_eq!(s.hits.load(Ordering::SeqCst), 9);
    }

    #[test]
    fn concurrency_is_bounded() {
        let s = stub(200, "ok", Duration::from_millis(60));
        let mut cfg = fast(&s.url);
        cfg.max_in_flight = 2;
        let out = complete_batch(&prompts(10), &cfg).unwrap();
        assert_eq!(out.len(), 10);
        let peak = s.peak.load(Ordering::SeqCst);
        assert!((1..=2).contains(&peak), "peak {peak}");
    }

    #[test]
    fn bad_configuration_is_rejected() {
        assert!(complete_batch(&prompts(1), &GatewayConfig::new("ftp://x"))
            .unwrap_err()
            .is_config());
        let mut cfg = GatewayConfig::new("http://localhost:1");
        cfg.max_in_flight = 0;
        assert!(cfg.validate().is_err());
        let dup = vec![
            ("a".to_string(), "p".to_string()),
            ("a".to_string(), "q".to_string()),
        ];
        assert!(complete_batch(&dup, &GatewayConfig::new("http://localhost:1")).is_err());
    }
}
