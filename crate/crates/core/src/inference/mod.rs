//! Generations for a test corpus: live endpoint, disk cache or mock oracles.

pub mod cache;
pub mod client;
pub mod mock;

use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompting::Prompt;
pub use cache::{CacheEntry, GenerationCache};
pub use client::{CallError, ChatClient, Completer, Completion};
pub use mock::{mock_corrupt, mock_echo, Corruption, CorruptionKind};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("endpoint unreachable after {attempts} attempts: {message}")]
    EndpointUnreachable { attempts: u32, message: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("cache io error: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub max_in_flight: usize,
    #[serde(with = "duration_millis")]
    pub timeout: Duration,
    pub retries: u32,
    /// First retry delay; doubles on each further attempt.
    #[serde(with = "duration_millis")]
    pub backoff: Duration,
}

mod duration_millis {
    use std::time::Duration;

    pub fn serialize<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            endpoint_url: "http://127.0.0.1:8000/v1".into(),
            model_name: "eclm".into(),
            temperature: 0.0,
            max_output_tokens: 512,
            max_in_flight: 4,
            timeout: Duration::from_secs(60),
            retries: 3,
            backoff: Duration::from_millis(250),
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(InferenceError::InvalidConfig(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if self.max_in_flight == 0 {
            return Err(InferenceError::InvalidConfig("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Live,
    Cache,
    Mock,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Live => "live",
            Source::Cache => "cache",
            Source::Mock => "mock",
        })
    }
}

/// Something went wrong obtaining this generation; it is kept in place.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationIssue {
    Timeout,
    HttpStatus(u16),
    BadResponse(String),
    Truncated,
    CacheMiss,
}

impl fmt::Display for GenerationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenerationIssue::Timeout => f.write_str("timeout"),
            GenerationIssue::HttpStatus(c) => write!(f, "http_status({c})"),
            GenerationIssue::BadResponse(m) => write!(f, "bad_response({m})"),
            GenerationIssue::Truncated => f.write_str("truncated"),
            GenerationIssue::CacheMiss => f.write_str("cache_miss"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub example_id: String,
    pub prompt: String,
    pub generation: String,
    pub latency: Duration,
    pub source: Source,
    pub issue: Option<GenerationIssue>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stable id of `(prompt, model, temperature)`.
pub fn example_id(prompt: &Prompt, model_name: &str, temperature: f64) -> String {
    let key = serde_json::json!([model_name, temperature, prompt.instruction, prompt.input]);
    sha256_hex(key.to_string().as_bytes())
}

pub fn prompt_hash(prompt: &Prompt) -> String {
    sha256_hex(prompt.to_string().as_bytes())
}

fn cached_record(prompt: &Prompt, id: String, entry: &CacheEntry) -> GenerationRecord {
    GenerationRecord {
        example_id: id,
        prompt: prompt.to_string(),
        generation: entry.generation.clone(),
        latency: Duration::ZERO,
        source: Source::Cache,
        issue: None,
    }
}

/// Cache lookups only; misses come back empty with a `CacheMiss` issue.
pub fn lookup_cached(prompts: &[Prompt], config: &InferenceConfig, cache: &GenerationCache) -> Vec<GenerationRecord> {
    prompts
        .iter()
        .map(|p| {
            let id = example_id(p, &config.model_name, config.temperature);
            match cache.get(&id) {
                Some(entry) => cached_record(p, id, entry),
                None => GenerationRecord {
                    example_id: id,
                    prompt: p.to_string(),
                    generation: String::new(),
                    latency: Duration::ZERO,
                    source: Source::Cache,
                    issue: Some(GenerationIssue::CacheMiss),
                },
            }
        })
        .collect()
}

/// Live generation with the OpenAI-compatible client, backed by a cache file.
pub fn generate_batch(
    prompts: &[Prompt],
    config: &InferenceConfig,
    cache_path: &Path,
) -> Result<Vec<GenerationRecord>, InferenceError> {
    config.validate()?;
    let mut cache = GenerationCache::open(cache_path)?;
    let client = ChatClient::new(
        &config.endpoint_url,
        &config.model_name,
        config.temperature,
        config.max_output_tokens,
        config.timeout,
    )
    .map_err(|e| InferenceError::EndpointUnreachable {
        attempts: 0,
        message: format!("{e:?}"),
    })?;
    generate_with(&client, prompts, config, &mut cache)
}

enum Outcome {
    Done(Completion, Duration),
    Failed(GenerationIssue, Duration),
    Unreachable(String),
}

fn call_with_retries(completer: &dyn Completer, prompt: &Prompt, config: &InferenceConfig) -> Outcome {
    let started = Instant::now();
    let mut attempt = 0;
    loop {
        match completer.complete(prompt) {
            Ok(c) => return Outcome::Done(c, started.elapsed()),
            Err(e) if e.is_retryable() && attempt < config.retries => {
                std::thread::sleep(config.backoff * 2u32.saturating_pow(attempt));
                attempt += 1;
            }
            Err(CallError::Connect(message)) => return Outcome::Unreachable(message),
            Err(CallError::Timeout) => return Outcome::Failed(GenerationIssue::Timeout, started.elapsed()),
            Err(CallError::Status(c)) => {
                return Outcome::Failed(GenerationIssue::HttpStatus(c), started.elapsed())
            }
            Err(CallError::BadResponse(m)) => {
                return Outcome::Failed(GenerationIssue::BadResponse(m), started.elapsed())
            }
        }
    }
}

/// Serves cache hits directly and sends misses to `completer` with at most
/// `max_in_flight` concurrent calls. Output order matches `prompts`.
pub fn generate_with(
    completer: &dyn Completer,
    prompts: &[Prompt],
    config: &InferenceConfig,
    cache: &mut GenerationCache,
) -> Result<Vec<GenerationRecord>, InferenceError> {
    config.validate()?;
    let ids: Vec<String> = prompts
        .iter()
        .map(|p| example_id(p, &config.model_name, config.temperature))
        .collect();
    let mut records: Vec<Option<GenerationRecord>> = prompts
        .iter()
        .zip(&ids)
        .map(|(p, id)| cache.get(id).map(|e| cached_record(p, id.clone(), e)))
        .collect();

    // Identical prompts share one request.
    let mut misses: Vec<usize> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, r) in records.iter().enumerate() {
        if r.is_none() && seen.insert(ids[i].as_str()) {
            misses.push(i);
        }
    }

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Outcome)>();
    let workers = config.max_in_flight.min(misses.len());
    let mut unreachable: Option<String> = None;

    std::thread::scope(|scope| -> Result<(), InferenceError> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, stop, misses) = (&next, &stop, &misses);
            scope.spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&i) = misses.get(k) else { break };
                    let outcome = call_with_retries(completer, &prompts[i], config);
                    if matches!(outcome, Outcome::Unreachable(_)) {
                        stop.store(true, Ordering::Relaxed);
                    }
                    if tx.send((i, outcome)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);

        // This thread is the cache's only writer.
        for (i, outcome) in rx {
            let prompt = &prompts[i];
            let record = match outcome {
                Outcome::Done(completion, latency) => {
                    cache.append(&ids[i], &prompt_hash(prompt), &completion.content)?;
                    GenerationRecord {
                        example_id: ids[i].clone(),
                        prompt: prompt.to_string(),
                        generation: completion.content,
                        latency,
                        source: Source::Live,
                        issue: completion.truncated.then_some(GenerationIssue::Truncated),
                    }
                }
                Outcome::Failed(issue, latency) => GenerationRecord {
                    example_id: ids[i].clone(),
                    prompt: prompt.to_string(),
                    generation: String::new(),
                    latency,
                    source: Source::Live,
                    issue: Some(issue),
                },
                Outcome::Unreachable(message) => {
                    unreachable.get_or_insert(message);
                    continue;
                }
            };
            records[i] = Some(record);
        }
        Ok(())
    })?;

    if let Some(message) = unreachable {
        return Err(InferenceError::EndpointUnreachable {
            attempts: config.retries + 1,
            message,
        });
    }

    // Duplicates of a prompt answered in this batch.
    for i in 0..records.len() {
        if records[i].is_none() {
            let first = (0..i).find(|&j| ids[j] == ids[i] && records[j].is_some());
            let mut copy = first.and_then(|j| records[j].clone()).expect("every miss was answered");
            copy.source = Source::Cache;
            copy.latency = Duration::ZERO;
            records[i] = Some(copy);
        }
    }
    Ok(records.into_iter().map(|r| r.expect("filled above")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Scripted {
        calls: AtomicUsize,
        in_flight: AtomicUsize,
        peak: AtomicUsize,
        fail_first: usize,
        error: CallError,
        seen: Mutex<Vec<String>>,
    }

    impl Scripted {
        fn new(fail_first: usize, error: CallError) -> Self {
            Scripted {
                calls: AtomicUsize::new(0),
                in_flight: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
                fail_first,
                error,
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    impl Completer for Scripted {
        fn complete(&self, prompt: &Prompt) -> Result<Completion, CallError> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            self.seen.lock().unwrap().push(prompt.input.clone());
            if n < self.fail_first {
                return Err(self.error.clone());
            }
            Ok(Completion {
                content: format!("echo {}", prompt.input),
                truncated: prompt.input.contains("long"),
            })
        }
    }

    fn prompts(inputs: &[&str]) -> Vec<Prompt> {
        inputs
            .iter()
            .map(|i| Prompt {
                instruction: "sys".into(),
                input: i.to_string(),
            })
            .collect()
    }

    fn fast_config(max_in_flight: usize) -> InferenceConfig {
        InferenceConfig {
            max_in_flight,
            backoff: Duration::from_millis(1),
            ..InferenceConfig::default()
        }
    }

    #[test]
    fn order_bounded_concurrency_and_cache() {
        let inputs: Vec<String> = (0..20).map(|i| format!("u{i}")).collect();
        let refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
        let ps = prompts(&refs);
        let completer = Scripted::new(0, CallError::Timeout);
        let mut cache = GenerationCache::in_memory();
        let config = fast_config(3);
        let out = generate_with(&completer, &ps, &config, &mut cache).unwrap();
        assert_eq!(out.len(), 20);
        for (i, r) in out.iter().enumerate() {
            assert_eq!(r.generation, format!("echo u{i}"));
            assert_eq!(r.source, Source::Live);
        }
        assert!(completer.peak.load(Ordering::SeqCst) <= 3);
        assert_eq!(completer.calls.load(Ordering::SeqCst), 20);

        let again = generate_with(&completer, &ps, &config, &mut cache).unwrap();
        assert_eq!(completer.calls.load(Ordering::SeqCst), 20);
        assert!(again.iter().all(|r| r.source == Source::Cache));
        let gens: Vec<_> = again.iter().map(|r| &r.generation).collect();
        assert_eq!(gens, out.iter().map(|r| &r.generation).collect::<Vec<_>>());
    }

    #[test]
    fn retries_then_succeeds() {
        let completer = Scripted::new(2, CallError::Status(503));
        let mut cache = GenerationCache::in_memory();
        let out = generate_with(&completer, &prompts(&["a"]), &fast_config(1), &mut cache).unwrap();
        assert_eq!(out[0].generation, "echo a");
        assert_eq!(completer.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn timeout_recorded_in_place() {
        let completer = Scripted::new(usize::MAX, CallError::Timeout);
        let mut cache = GenerationCache::in_memory();
        let config = InferenceConfig {
            retries: 1,
            ..fast_config(2)
        };
        let out = generate_with(&completer, &prompts(&["a", "b"]), &config, &mut cache).unwrap();
        assert!(out.iter().all(|r| r.generation.is_empty() && r.issue == Some(GenerationIssue::Timeout)));
        assert!(cache.is_empty());
    }

    #[test]
    fn unreachable_aborts() {
        let completer = Scripted::new(usize::MAX, CallError::Connect("refused".into()));
        let mut cache = GenerationCache::in_memory();
        let err = generate_with(&completer, &prompts(&["a"]), &fast_config(1), &mut cache);
        assert!(matches!(err, Err(InferenceError::EndpointUnreachable { attempts: 4, .. })));
    }

    #[test]
    fn duplicate_prompts_share_a_call() {
        let completer = Scripted::new(0, CallError::Timeout);
        let mut cache = GenerationCache::in_memory();
        let out = generate_with(&completer, &prompts(&["a", "a", "long"]), &fast_config(2), &mut cache).unwrap();
        assert_eq!(completer.calls.load(Ordering::SeqCst), 2);
        assert_eq!(out[1].generation, "echo a");
        assert_eq!(out[2].issue, Some(GenerationIssue::Truncated));
    }

    #[test]
    fn ids_are_stable() {
        let p = &prompts(&["x"])[0];
        assert_eq!(example_id(p, "m", 0.0), example_id(p, "m", 0.0));
        assert_ne!(example_id(p, "m", 0.0), example_id(p, "m", 0.7));
        assert_ne!(example_id(p, "m", 0.0), example_id(p, "n", 0.0));
        assert_eq!(example_id(p, "m", 0.0).len(), 64);
    }

    #[test]
    fn config_validation() {
        let mut c = InferenceConfig::default();
        assert_eq!(c.temperature, 0.0);
        c.max_in_flight = 0;
        assert!(c.validate().is_err());
        c.max_in_flight = 1;
        c.temperature = -0.5;
        assert!(c.validate().is_err());
    }
}
