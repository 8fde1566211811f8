//! Remote generation and retrieval clients against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use rag_selftrain::generation::{
    generate, Backend, GenerationConfig, GenerationError, PromptMessages, RemoteBackend,
};
use rag_selftrain::http::RetryPolicy;
use rag_selftrain::retrieval::{RemoteRetriever, RetrievalError, Retriever};

#[derive(Debug, Clone)]
struct Seen {
    authorization: Option<String>,
    body: serde_json::Value,
}

struct Stub {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
    handle: JoinHandle<()>,
}

/// Serves one scripted `(status, body)` per connection, then stops.
fn stub(script: Vec<(u16, String)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/endpoint", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let handle = std::thread::spawn(move || {
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut len = 0usize;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    match k.to_ascii_lowercase().as_str() {
                        "content-length" => len = v.trim().parse().unwrap(),
                        "authorization" => authorization = Some(v.trim().to_owned()),
                        _ => {}
                    }
                }
            }
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                authorization,
                body: serde_json::from_slice(&buf).unwrap_or(serde_json::Value::Null),
            });
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    Stub { url, seen, handle }
}

fn fast_policy() -> RetryPolicy {
    RetryPolicy {
        retries: 3,
        base_delay_ms: 1,
        max_delay_ms: 2,
        timeout_ms: 5_000,
    }
}

fn chat(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
        .to_string()
}

fn prompt() -> PromptMessages {
    PromptMessages {
        system: "You are a helpful assistant.".into(),
        user: "Where is the Louvre?".into(),
    }
}

#[test]
fn generation_retries_server_errors_then_succeeds() {
    let s = stub(vec![
        (500, "{}".into()),
        (503, "{}".into()),
        (200, chat("Paris")),
    ]);
    let backend = RemoteBackend::new(&s.url, "m-1", Some("tok".into()), fast_policy(), 2);
    let cfg = GenerationConfig::questions().with_seed(9);
    let r = generate(&prompt(), &cfg, &backend).unwrap();
    s.handle.join().unwrap();
    assert_eq!(r.text, "Paris");
    assert_eq!(r.attempt, 3);

    let seen = s.seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    let req = &seen[2];
    assert_eq!(req.authorization.as_deref(), Some("Bearer tok"));
    assert_eq!(req.body["model"], "m-1");
    assert_eq!(req.body["messages"][0]["role"], "system");
    assert_eq!(req.body["messages"][1]["content"], "Where is the Louvre?");
    assert_eq!(req.body["seed"], 9);
    assert_eq!(req.body["max_tokens"], 96);
}

#[test]
fn empty_completion_is_an_error() {
    let s = stub(vec![(200, chat("   "))]);
    let backend = RemoteBackend::new(&s.url, "m", None, fast_policy(), 1);
    let err = generate(&prompt(), &GenerationConfig::answers(), &backend).unwrap_err();
    s.handle.join().unwrap();
    assert!(
        matches!(err, GenerationError::EmptyOutput { attempt: 1 }),
        "{err}"
    );
    assert!(s.seen.lock().unwrap()[0].authorization.is_none());
}

#[test]
fn exhausted_retries_report_attempts() {
    let s = stub(vec![(500, "{}".into()), (500, "{}".into())]);
    let backend = RemoteBackend::new(&s.url, "m", None, fast_policy(), 1);
    let cfg = GenerationConfig {
        retries: 1,
        ..GenerationConfig::answers()
    };
    let err = backend.complete(&prompt(), &cfg).unwrap_err();
    s.handle.join().unwrap();
    match err {
        GenerationError::BackendUnavailable { attempts, last } => {
            assert_eq!(attempts, 2);
            assert!(last.contains("500"), "{last}");
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn remote_retriever_drops_unknown_ids() {
    let body = serde_json::json!({"results": [
        {"id": "a#0", "score": 3.0},
        {"id": "ghost#9", "score": 2.5},
        {"id": "b#0", "score": 1.0}
    ]})
    .to_string();
    let s = stub(vec![(200, body)]);
    let r = RemoteRetriever::new(&s.url, fast_policy(), ["a#0".into(), "b#0".into()], 1);
    let hits = r.remote_retrieve("louvre", 5).unwrap();
    s.handle.join().unwrap();
    assert_eq!(hits.rejected_count, 1);
    let ids: Vec<(&str, usize)> = hits
        .results
        .iter()
        .map(|h| (h.passage_id.as_str(), h.rank))
        .collect();
    assert_eq!(ids, [("a#0", 1), ("b#0", 2)]);
    let req = &s.seen.lock().unwrap()[0].body;
    assert_eq!(req["query"], "louvre");
    assert_eq!(req["k"], 5);
}

#[test]
fn unreachable_retriever_is_unavailable() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let policy = RetryPolicy {
        retries: 1,
        ..fast_policy()
    };
    let r = RemoteRetriever::new(format!("http://127.0.0.1:{port}/search"), policy, [], 1);
    let err = r.retrieve("anything", 3).unwrap_err();
    assert!(matches!(err, RetrievalError::Unavailable(_)), "{err}");
}
