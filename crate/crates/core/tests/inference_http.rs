mod common;

use std::sync::Arc;
use std::time::Duration;

use common::server::{dead_url, user_message, MockServer};
use eclm::inference::{generate_batch, GenerationCache, GenerationIssue, InferenceConfig, InferenceError, Source};
use eclm::prompting::Prompt;

fn prompts(n: usize) -> Vec<Prompt> {
    (0..n)
        .map(|i| Prompt {
            instruction: "label it".into(),
            input: format!("utterance number {i}"),
        })
        .collect()
}

fn config(url: &str) -> InferenceConfig {
    InferenceConfig {
        endpoint_url: url.to_owned(),
        model_name: "test-model".into(),
        timeout: Duration::from_secs(5),
        retries: 2,
        backoff: Duration::from_millis(1),
        ..InferenceConfig::default()
    }
}

fn echo_server() -> MockServer {
    MockServer::start(Arc::new(|req, _| (200, format!("INTENTS: {}", user_message(req)), "stop")))
}

#[test]
fn warm_cache_makes_no_requests() {
    let server = echo_server();
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.jsonl");
    let ps = prompts(12);

    let first = generate_batch(&ps, &config(&server.url), &cache).unwrap();
    assert_eq!(server.count(), 12);
    assert!(first.iter().all(|r| r.source == Source::Live && r.issue.is_none()));
    for (r, p) in first.iter().zip(&ps) {
        assert_eq!(r.generation, format!("INTENTS: {}", p.input));
    }

    let second = generate_batch(&ps, &config(&server.url), &cache).unwrap();
    assert_eq!(server.count(), 12);
    assert!(second.iter().all(|r| r.source == Source::Cache));
    let gens = |rs: &[eclm::inference::GenerationRecord]| rs.iter().map(|r| r.generation.clone()).collect::<Vec<_>>();
    assert_eq!(gens(&first), gens(&second));
    assert_eq!(GenerationCache::open(&cache).unwrap().len(), 12);
}

#[test]
fn duplicate_prompts_share_a_request() {
    let server = echo_server();
    let dir = tempfile::tempdir().unwrap();
    let mut ps = prompts(3);
    ps.extend(prompts(3));
    let records = generate_batch(&ps, &config(&server.url), &dir.path().join("c.jsonl")).unwrap();
    assert_eq!(server.count(), 3);
    assert_eq!(records[0].generation, records[3].generation);
}

#[test]
fn changing_the_model_misses_the_cache() {
    let server = echo_server();
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("c.jsonl");
    generate_batch(&prompts(2), &config(&server.url), &cache).unwrap();
    let other = InferenceConfig {
        model_name: "other".into(),
        ..config(&server.url)
    };
    generate_batch(&prompts(2), &other, &cache).unwrap();
    assert_eq!(server.count(), 4);
}

#[test]
fn unreachable_endpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = generate_batch(&prompts(3), &config(&dead_url()), &dir.path().join("c.jsonl")).unwrap_err();
    match err {
        InferenceError::EndpointUnreachable { attempts, .. } => assert_eq!(attempts, 3),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn server_errors_are_retried() {
    let server = MockServer::start(Arc::new(|req, n| {
        if n == 0 {
            (503, String::new(), "stop")
        } else {
            (200, user_message(req), "stop")
        }
    }));
    let dir = tempfile::tempdir().unwrap();
    let records = generate_batch(&prompts(1), &config(&server.url), &dir.path().join("c.jsonl")).unwrap();
    assert_eq!(server.count(), 2);
    assert_eq!(records[0].issue, None);
}

#[test]
fn client_errors_and_truncation_are_kept_in_place() {
    let server = MockServer::start(Arc::new(|req, _| {
        let input = user_message(req);
        if input.ends_with('0') {
            (400, String::new(), "stop")
        } else {
            (200, input, "length")
        }
    }));
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("c.jsonl");
    let records = generate_batch(&prompts(2), &config(&server.url), &cache).unwrap();
    assert_eq!(server.count(), 2);
    assert_eq!(records[0].issue, Some(GenerationIssue::HttpStatus(400)));
    assert_eq!(records[0].generation, "");
    assert_eq!(records[1].issue, Some(GenerationIssue::Truncated));
    assert_eq!(GenerationCache::open(&cache).unwrap().len(), 1);
}
