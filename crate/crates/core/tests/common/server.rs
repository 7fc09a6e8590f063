//! Minimal HTTP/1.1 server speaking just enough `/chat/completions`.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};

/// Maps (request body, request number) to (status, content, finish_reason).
pub type Handler = dyn Fn(&Value, usize) -> (u16, String, &'static str) + Send + Sync;

pub struct MockServer {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
}

impl MockServer {
    pub fn start(handler: Arc<Handler>) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let counter = requests.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let (handler, counter) = (handler.clone(), counter.clone());
                std::thread::spawn(move || serve(stream, &*handler, &counter));
            }
        });
        MockServer { url, requests }
    }

    pub fn count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

fn serve(stream: TcpStream, handler: &Handler, counter: &AtomicUsize) {
    let mut writer = stream.try_clone().unwrap();
    let mut reader = BufReader::new(stream);
    loop {
        let mut content_length = 0usize;
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        loop {
            line.clear();
            if reader.read_line(&mut line).unwrap_or(0) == 0 {
                return;
            }
            let header = line.trim_end();
            if header.is_empty() {
                break;
            }
            if let Some((k, v)) = header.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    content_length = v.trim().parse().unwrap();
                }
            }
        }
        let mut body = vec![0; content_length];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
        let n = counter.fetch_add(1, Ordering::SeqCst);
        let (status, content, finish) = handler(&request, n);
        let payload = json!({
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": finish}]
        })
        .to_string();
        let response = format!(
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{payload}",
            payload.len()
        );
        if writer.write_all(response.as_bytes()).is_err() {
            return;
        }
    }
}

/// The user message of a chat request.
pub fn user_message(request: &Value) -> String {
    request["messages"][1]["content"].as_str().unwrap_or_default().to_owned()
}

/// A local port with nothing listening on it.
pub fn dead_url() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}/v1")
}

/// A server answering each prompt with the gold target of its utterance.
pub fn gold_server(corpus: &[eclm::corpus::Example], variant: eclm::prompting::PromptVariant) -> MockServer {
    let conn = eclm::intent_chain::Connectives::default();
    let answers: std::collections::HashMap<String, String> = corpus
        .iter()
        .map(|ex| {
            let (gold, _) = eclm::prompting::LabelStructure::gold(ex, &conn);
            (ex.utterance(), eclm::prompting::render_structure(&gold, variant))
        })
        .collect();
    MockServer::start(Arc::new(move |req, _| {
        let answer = answers.get(user_message(req).trim()).cloned().unwrap_or_default();
        (200, answer, "stop")
    }))
}
