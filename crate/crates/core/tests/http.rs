//! Wire-level tests for the reranker client and the chat-completion backend
//! against a scripted local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use mcqa_engine::llm::{ChatBackend, ChatMessage, FixtureKey, Gateway, GatewayError, OpenAiBackend, Role, RoleConfig};
use mcqa_engine::retrieval::rerank::{HttpReranker, HttpRerankerConfig, Passage, RerankError, Reranker};
use mcqa_engine::sync::RetryPolicy;
use serde_json::{json, Value};

struct Captured {
    path: String,
    headers: Vec<(String, String)>,
    body: Value,
}

/// Answers one connection per scripted `(status, body)` pair, in order.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = std::thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line.split_whitespace().nth(1).unwrap_or_default().to_string();
            let mut headers = Vec::new();
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                let (k, v) = (k.trim().to_lowercase(), v.trim().to_string());
                if k == "content-length" {
                    length = v.parse().unwrap();
                }
                headers.push((k, v));
            }
            let mut raw = vec![0u8; length];
            reader.read_exact(&mut raw).unwrap();
            log.lock().unwrap().push(Captured {
                path,
                headers,
                body: serde_json::from_slice(&raw).unwrap_or(Value::Null),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (addr, seen, handle)
}

fn fast_retry(n: u32) -> RetryPolicy {
    RetryPolicy {
        max_retries: n,
        base_delay_ms: 1,
        max_delay_ms: 5,
    }
}

fn passages() -> Vec<Passage> {
    vec![
        Passage { id: "d1".into(), text: "NF2 merlin".into() },
        Passage { id: "d2".into(), text: "renal cell carcinoma".into() },
    ]
}

#[test]
fn reranker_wire_format() {
    let (url, seen, h) = serve(vec![(200, json!({"scores": [{"id": "d2", "score": 0.1}, {"id": "d1", "score": 0.9}]}).to_string())]);
    let r = HttpReranker::new(HttpRerankerConfig {
        url: format!("{url}/rerank"),
        timeout_ms: 5_000,
        retry: fast_retry(0),
        max_in_flight: 2,
    });
    let scores = r.score("nf2 risk", &passages()).unwrap();
    assert_eq!(scores, vec![0.9, 0.1]);
    h.join().unwrap();
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/rerank");
    assert_eq!(
        seen[0].body,
        json!({"query": "nf2 risk", "passages": [{"id": "d1", "text": "NF2 merlin"}, {"id": "d2", "text": "renal cell carcinoma"}]})
    );
}

#[test]
fn reranker_retries_server_errors() {
    let ok = json!({"scores": [{"id": "d1", "score": 1.0}, {"id": "d2", "score": 0.0}]}).to_string();
    let (url, seen, h) = serve(vec![(503, "{}".into()), (200, ok)]);
    let r = HttpReranker::new(HttpRerankerConfig {
        url,
        timeout_ms: 5_000,
        retry: fast_retry(2),
        max_in_flight: 1,
    });
    assert_eq!(r.score("q", &passages()).unwrap(), vec![1.0, 0.0]);
    h.join().unwrap();
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn reranker_missing_score_is_invalid() {
    let (url, _, h) = serve(vec![(200, json!({"scores": [{"id": "d1", "score": 1.0}]}).to_string())]);
    let r = HttpReranker::new(HttpRerankerConfig {
        url,
        timeout_ms: 5_000,
        retry: fast_retry(0),
        max_in_flight: 1,
    });
    assert!(matches!(r.score("q", &passages()), Err(RerankError::InvalidResponse(_))));
    h.join().unwrap();
}

#[test]
fn unreachable_reranker_reports_attempts() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let r = HttpReranker::new(HttpRerankerConfig {
        url: format!("http://127.0.0.1:{port}/rerank"),
        timeout_ms: 1_000,
        retry: fast_retry(1),
        max_in_flight: 1,
    });
    match r.score("q", &passages()) {
        Err(RerankError::Unreachable { attempts, .. }) => assert_eq!(attempts, 2),
        other => panic!("{other:?}"),
    }
}

fn chat_gateway(url: &str, retries: u32) -> Gateway {
    let backend = OpenAiBackend::new("remote", &format!("{url}/v1/"), Some("sk-test".into()), Duration::from_secs(5));
    Gateway::builder()
        .backend("remote", Arc::new(backend) as Arc<dyn ChatBackend>, None)
        .role(RoleConfig::with_defaults(Role::Generator, "m-7b", "remote"))
        .retry(fast_retry(retries))
        .build()
        .unwrap()
}

#[test]
fn chat_completion_wire_format() {
    let reply = json!({
        "choices": [{"message": {"role": "assistant", "content": "Background Document: text"}}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 3}
    });
    let (url, seen, h) = serve(vec![(200, reply.to_string())]);
    let gw = chat_gateway(&url, 0);
    let req = gw
        .request(Role::Generator, vec![ChatMessage::user("hi")], FixtureKey::new(Role::Generator, "q1", "k1"), 0)
        .unwrap();
    let resp = gw.chat(&req).unwrap();
    assert_eq!(resp.text, "Background Document: text");
    assert_eq!((resp.usage.prompt_tokens, resp.usage.completion_tokens), (12, 3));
    h.join().unwrap();
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert!(seen[0].headers.contains(&("authorization".into(), "Bearer sk-test".into())));
    assert_eq!(
        seen[0].body,
        json!({"model": "m-7b", "messages": [{"role": "user", "content": "hi"}], "temperature": 1.2, "max_tokens": 256})
    );
}

#[test]
fn chat_retries_429_and_5xx_only() {
    let reply = json!({"choices": [{"message": {"content": "ok"}}]}).to_string();
    let (url, seen, h) = serve(vec![(429, "{}".into()), (500, "{}".into()), (200, reply)]);
    let gw = chat_gateway(&url, 2);
    let req = gw
        .request(Role::Generator, vec![ChatMessage::user("x")], FixtureKey::new(Role::Generator, "q", "k1"), 0)
        .unwrap();
    assert_eq!(gw.chat(&req).unwrap().text, "ok");
    h.join().unwrap();
    assert_eq!(seen.lock().unwrap().len(), 3);

    let (url, seen, h) = serve(vec![(400, r#"{"error":"bad model"}"#.into())]);
    let gw = chat_gateway(&url, 3);
    match gw.chat(&req) {
        Err(GatewayError::Backend { attempts, source }) => {
            assert_eq!(attempts, 1);
            assert!(source.to_string().contains("400"), "{source}");
        }
        other => panic!("{other:?}"),
    }
    h.join().unwrap();
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn chat_without_content_is_invalid() {
    let (url, _, h) = serve(vec![(200, json!({"choices": []}).to_string())]);
    let gw = chat_gateway(&url, 2);
    let req = gw
        .request(Role::Generator, vec![ChatMessage::user("x")], FixtureKey::new(Role::Generator, "q", "k1"), 0)
        .unwrap();
    assert!(matches!(gw.chat(&req), Err(GatewayError::Backend { attempts: 1, .. })));
    h.join().unwrap();
}
