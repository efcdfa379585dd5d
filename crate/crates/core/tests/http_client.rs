//! The HTTP backend against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use egomem::backend::{BackendError, GenerationRequest, TaskKind};
use egomem::{BackendConfig, Embedder, Generator, HttpBackend};
use serde_json::{json, Value};

type Seen = Arc<Mutex<Vec<(String, Value, Option<String>)>>>;

struct Server {
    url: String,
    seen: Seen,
}

fn read_request(stream: &mut TcpStream) -> (String, Value, Option<String>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let path = line.split_whitespace().nth(1).unwrap_or_default().to_string();
    let mut len = 0;
    let mut auth = None;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (k, v) = h.split_once(':').unwrap();
        match k.to_ascii_lowercase().as_str() {
            "content-length" => len = v.trim().parse().unwrap(),
            "authorization" => auth = Some(v.trim().to_string()),
            _ => {}
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    (path, serde_json::from_slice(&body).unwrap_or(Value::Null), auth)
}

/// Answers each incoming request with the next scripted `(status, body)`.
fn serve(script: Vec<(u16, String)>) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in script {
            let Ok((mut stream, _)) = listener.accept() else { return };
            log.lock().unwrap().push(read_request(&mut stream));
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    Server { url, seen }
}

fn config(url: &str, retries: u32) -> BackendConfig {
    serde_json::from_value(json!({
        "endpoint_url": url,
        "model_name": "test-model",
        "api_key_env": "EGOMEM_TEST_KEY",
        "max_retries": retries,
        "backoff_base_seconds": 0.0,
        "timeout_seconds": 5.0,
    }))
    .unwrap()
}

fn chat(text: &str) -> String {
    json!({"choices": [{"message": {"content": text}}], "usage": {"prompt_tokens": 7, "completion_tokens": 1}})
        .to_string()
}

fn request() -> GenerationRequest {
    GenerationRequest::new(TaskKind::Answer, "pick one".into(), Value::Null)
}

fn backend(url: &str, retries: u32) -> HttpBackend {
    HttpBackend::new(config(url, retries))
        .unwrap()
        .with_key_lookup(|_| Some("sk-test".into()))
}

#[test]
fn retries_transient_failures_then_succeeds() {
    let s = serve(vec![(503, "{}".into()), (429, "{}".into()), (200, chat("B"))]);
    let g = backend(&s.url, 3).generate(&request()).unwrap();
    assert_eq!(g.text, "B");
    assert_eq!(g.attempts, 3);
    assert_eq!(g.usage.prompt_tokens, 7);
    let seen = s.seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    let (path, body, auth) = &seen[0];
    assert_eq!(path, "/v1/chat/completions");
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["content"], "pick one");
    assert_eq!(auth.as_deref(), Some("Bearer sk-test"));
}

#[test]
fn gives_up_after_the_retry_budget() {
    let s = serve(vec![(500, "{}".into()); 3]);
    match backend(&s.url, 2).generate(&request()) {
        Err(BackendError::TransientExhausted { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn auth_failures_are_not_retried() {
    let s = serve(vec![(401, "{}".into()), (200, chat("A"))]);
    let err = backend(&s.url, 3).generate(&request()).unwrap_err();
    assert!(matches!(err, BackendError::Auth(_)), "{err:?}");
    assert_eq!(s.seen.lock().unwrap().len(), 1);
}

#[test]
fn missing_key_fails_before_any_request() {
    let s = serve(vec![(200, chat("A"))]);
    let b = HttpBackend::new(config(&s.url, 3)).unwrap().with_key_lookup(|_| None);
    let err = b.generate(&request()).unwrap_err();
    assert!(err.to_string().contains("EGOMEM_TEST_KEY"), "{err}");
    assert!(s.seen.lock().unwrap().is_empty());
}

#[test]
fn malformed_completion_is_reported() {
    let s = serve(vec![(200, r#"{"choices": []}"#.into())]);
    let err = backend(&s.url, 0).generate(&request()).unwrap_err();
    assert!(matches!(err, BackendError::MalformedResponse(_)), "{err:?}");
}

#[test]
fn embeddings_endpoint() {
    let s = serve(vec![(
        200,
        json!({"data": [{"embedding": [0.5, -1.0, 2.0]}]}).to_string(),
    )]);
    let v = backend(&s.url, 0).embed("hello").unwrap();
    assert_eq!(v, vec![0.5, -1.0, 2.0]);
    assert_eq!(s.seen.lock().unwrap()[0].0, "/v1/embeddings");
}
