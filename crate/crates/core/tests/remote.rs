//! Remote embedding client against a throwaway local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use kfuse_core::{
    inject_sentence, tokenize, EmbeddingProvider, EntityRecord, Error, InjectionConfig, KgStore,
};
use serde_json::Value;

/// Serves one canned reply per incoming request, computed from the parsed
/// request body. Returns the endpoint URL.
fn serve(replies: usize, respond: fn(&Value) -> (u16, String)) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming().take(replies) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let request: Value = serde_json::from_slice(&body).unwrap();
            let (status, reply) = respond(&request);
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    format!("http://{addr}/embed")
}

fn texts(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// One-hot vector per text, keyed on its length.
fn echo(request: &Value) -> (u16, String) {
    let rows: Vec<Vec<f64>> = request["texts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| {
            let mut v = vec![0.0; 4];
            v[t.as_str().unwrap().len() % 4] = 2.0;
            v
        })
        .collect();
    (200, serde_json::json!({ "embeddings": rows }).to_string())
}

#[test]
fn remote_success_normalizes_rows() {
    let endpoint = serve(1, echo);
    let provider = EmbeddingProvider::remote(endpoint, Duration::from_secs(5)).unwrap();
    let out = provider.embed(&texts(&["a", "bb", "ccc"])).unwrap();
    assert_eq!(out.len(), 3);
    for (k, v) in out.iter().enumerate() {
        assert_eq!(v.dim(), 4);
        assert!((v.norm() - 1.0).abs() < 1e-12);
        assert_eq!(v.values[(k + 1) % 4], 1.0);
    }
}

#[test]
fn remote_row_count_mismatch_is_an_error() {
    let endpoint = serve(1, |_| (200, r#"{"embeddings": [[1.0, 0.0]]}"#.into()));
    let provider = EmbeddingProvider::remote(endpoint.clone(), Duration::from_secs(5)).unwrap();
    match provider.embed(&texts(&["a", "b"])) {
        Err(Error::Remote { endpoint: e, batch, message }) => {
            assert_eq!(e, endpoint);
            assert_eq!(batch, 0);
            assert!(message.contains("expected 2"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn remote_http_error_is_an_error() {
    let endpoint = serve(1, |_| (503, "{}".into()));
    let provider = EmbeddingProvider::remote(endpoint, Duration::from_secs(5)).unwrap();
    let err = provider.embed(&texts(&["a"])).unwrap_err();
    assert!(err.to_string().contains("503"), "{err}");
}

#[test]
fn remote_unreachable_is_an_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let provider = EmbeddingProvider::remote(format!("http://{addr}/embed"), Duration::from_secs(2)).unwrap();
    assert!(matches!(provider.embed(&texts(&["a"])), Err(Error::Remote { .. })));
}

#[test]
fn injection_surfaces_remote_failure_with_text_index() {
    let store = KgStore::from_records(vec![
        EntityRecord::new("Q1", "Apple").with_description("technology company"),
        EntityRecord::new("Q2", "Apple Records").with_aliases(["Apple"]),
    ])
    .unwrap();
    let endpoint = serve(1, |_| (500, "{}".into()));
    let provider = EmbeddingProvider::remote(endpoint, Duration::from_secs(5)).unwrap();
    let err = inject_sentence(
        &tokenize("Apple shares rose."),
        &store,
        &provider,
        &InjectionConfig::for_single(),
        None,
        "7",
    )
    .unwrap_err();
    assert!(matches!(err, Error::EmbedText { index: 0, .. }), "{err:?}");
}

#[test]
fn injection_through_remote_provider_selects() {
    let store = KgStore::from_records(vec![EntityRecord::new("Q1", "Apple").with_description("fruit")]).unwrap();
    let endpoint = serve(1, |request| {
        let n = request["texts"].as_array().unwrap().len();
        (200, serde_json::json!({ "embeddings": vec![vec![1.0, 1.0]; n] }).to_string())
    });
    let provider = EmbeddingProvider::remote(endpoint, Duration::from_secs(5)).unwrap();
    let out = inject_sentence(
        &tokenize("Apple pie."),
        &store,
        &provider,
        &InjectionConfig::for_single(),
        None,
        "1",
    )
    .unwrap();
    assert_eq!(out.tree.groups[0].mention_entity.as_deref(), Some("Q1"));
    assert_eq!(out.tree.branch_count(), 1);
}
