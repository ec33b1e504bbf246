//! Wire-level checks against a throwaway local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use imageshare_core::augment::{HttpImageProvider, ImageProvider};
use imageshare_core::data::{ImageRef, ImageSource};
use imageshare_core::llm::{default_config, Gateway, GatewayError, OpenAiBackend, ResponseCache, RetryPolicy, Stage};
use imageshare_core::retrieval::{EmbeddingBackend, HttpEmbedder};

#[derive(Debug, Clone)]
struct Seen {
    method: String,
    path: String,
    auth: Option<String>,
    body: String,
}

/// Serves `replies` (status, body) in order, one connection each.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = std::thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let mut parts = line.split_whitespace();
            let method = parts.next().unwrap_or_default().to_owned();
            let path = parts.next().unwrap_or_default().to_owned();
            let (mut len, mut auth) = (0usize, None);
            loop {
                let mut header = String::new();
                reader.read_line(&mut header).unwrap();
                let header = header.trim_end();
                if header.is_empty() {
                    break;
                }
                let (name, value) = header.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_owned()),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen { method, path, auth, body: String::from_utf8(buf).unwrap() });
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            reader.into_inner().write_all(reply.as_bytes()).unwrap();
        }
    });
    (base, seen, handle)
}

fn chat_reply(text: &str) -> String {
    serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": text } }] }).to_string()
}

fn gateway(backend: OpenAiBackend) -> Gateway {
    let gw = Gateway::new(ResponseCache::in_memory()).with_retry(RetryPolicy::immediate(3));
    gw.register(Arc::new(backend)).unwrap();
    gw
}

#[test]
fn chat_request_carries_prompt_and_sampling_parameters() {
    let (base, seen, handle) = serve(vec![(200, chat_reply("{'Prediction': 'no'}"))]);
    let backend = OpenAiBackend::new("oa", "some-model", format!("{base}/v1"), Some("k-123".into())).unwrap();
    let gw = gateway(backend);
    let cfg = default_config(Stage::Stage1).with_backend("oa");
    let out = gw.complete_text("Dialogue:\nA: hi\nAnswer:", &cfg).unwrap();
    handle.join().unwrap();
    assert_eq!(out.text, "{'Prediction': 'no'}");
    assert!(!out.cached);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!((seen[0].method.as_str(), seen[0].path.as_str()), ("POST", "/v1/chat/completions"));
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer k-123"));
    let body: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(body["model"], "some-model");
    assert_eq!(body["messages"].as_array().unwrap().len(), 1);
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], "Dialogue:\nA: hi\nAnswer:");
    assert_eq!(body["max_tokens"], cfg.max_tokens);
    assert_eq!(body["temperature"], cfg.temperature);
    assert_eq!(body["top_p"], cfg.top_p);

    // Served from cache the second time: no further connection is accepted.
    assert!(gw.complete_text("Dialogue:\nA: hi\nAnswer:", &cfg).unwrap().cached);
}

#[test]
fn server_errors_are_retried_and_client_errors_are_not() {
    let (base, seen, handle) = serve(vec![
        (500, "{}".into()),
        (429, "{}".into()),
        (200, chat_reply("recovered")),
        (400, "{\"error\": \"bad\"}".into()),
    ]);
    let gw = gateway(OpenAiBackend::new("oa", "m", base, None).unwrap());
    let cfg = default_config(Stage::Stage2).with_backend("oa");
    assert_eq!(gw.complete_text("first", &cfg).unwrap().text, "recovered");
    let err = gw.complete_text("second", &cfg).unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, GatewayError::BackendRefusedRequest { status: 400, .. }), "{err:?}");
    assert_eq!(err.tag(), "backend_refused_request");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 4);
    assert!(seen.iter().all(|s| s.auth.is_none()));
}

#[test]
fn exhausted_retries_report_unavailable() {
    let (base, _, handle) = serve(vec![(503, "{}".into()); 3]);
    let gw = gateway(OpenAiBackend::new("oa", "m", base, None).unwrap());
    let err = gw.complete_text("p", &default_config(Stage::Stage1).with_backend("oa")).unwrap_err();
    handle.join().unwrap();
    assert_eq!(err.tag(), "backend_unavailable");
}

#[test]
fn embedding_service_contract() {
    let (base, seen, handle) = serve(vec![
        (200, "{\"dim\": 3}".into()),
        (200, "[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]".into()),
        (200, "[[0.5, 0.5, 0.0]]".into()),
        (200, "[[1.0, 0.0]]".into()),
    ]);
    let emb = HttpEmbedder::connect("clip", format!("{base}/")).unwrap();
    assert_eq!(emb.dim(), 3);
    assert_eq!(emb.backend_id(), "clip");
    let texts = emb.embed_texts(&["a".into(), "b".into()]).unwrap();
    assert_eq!(texts, vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
    let img = ImageRef::corpus("i1", "images/1.jpg");
    assert_eq!(emb.embed_images(std::slice::from_ref(&img)).unwrap(), vec![vec![0.5, 0.5, 0.0]]);
    let err = emb.embed_texts(&["c".into()]).unwrap_err();
    assert_eq!(err.index, Some(0));
    handle.join().unwrap();
    let seen = seen.lock().unwrap();
    let paths: Vec<_> = seen.iter().map(|s| (s.method.as_str(), s.path.as_str())).collect();
    assert_eq!(paths, [("GET", "/meta"), ("POST", "/embed/text"), ("POST", "/embed/image"), ("POST", "/embed/text")]);
    let body: serde_json::Value = serde_json::from_str(&seen[1].body).unwrap();
    assert_eq!(body, serde_json::json!({ "texts": ["a", "b"] }));
    let body: serde_json::Value = serde_json::from_str(&seen[2].body).unwrap();
    assert_eq!(body, serde_json::json!({ "uris": ["images/1.jpg"] }));
}

#[test]
fn image_provider_contract() {
    let (base, seen, handle) = serve(vec![(200, "{\"image_uri\": \"gen/abc.png\"}".into()), (500, "{}".into())]);
    let provider = HttpImageProvider::new("gen", format!("{base}/generate")).unwrap();
    let img = provider.acquire("An image of a lake").unwrap();
    assert_eq!(img.uri, "gen/abc.png");
    assert_eq!(img.source, ImageSource::Generated);
    assert_eq!(img.id.len(), 16);
    assert!(provider.acquire("An image of a cat").is_err());
    handle.join().unwrap();
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/generate");
    let body: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(body, serde_json::json!({ "description": "An image of a lake" }));
}
