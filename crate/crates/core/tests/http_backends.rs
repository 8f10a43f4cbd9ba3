//! Remote backends against a local HTTP server that replays scripted responses.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use tkg_core::backends::http::{ChatClient, ChatClientConfig, HttpAnnotator, HttpEmbedder};
use tkg_core::backends::{
    fallback_decision, Annotator, Arbiter, ArbitrationCase, BackendError, Decision, DecisionSource, Embedder, EntityRef,
    RelationClaim, Reranker, Sampler, SamplerConfig, Templates, EMBEDDING_DIM,
};
use tkg_core::schema::{EntityType, RelationType};

struct Request {
    authorization: Option<String>,
    body: Value,
}

type Responder = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

struct Server {
    url: String,
    requests: Arc<Mutex<Vec<Request>>>,
    max_in_flight: Arc<AtomicUsize>,
}

fn read_request(stream: &mut TcpStream) -> Option<Request> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut length = 0;
    let mut authorization = None;
    loop {
        line.clear();
        reader.read_line(&mut line).ok()?;
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        let (name, value) = l.split_once(':')?;
        match name.to_ascii_lowercase().as_str() {
            "content-length" => length = value.trim().parse().ok()?,
            "authorization" => authorization = Some(value.trim().to_string()),
            _ => {}
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    Some(Request { authorization, body: serde_json::from_slice(&body).unwrap_or(Value::Null) })
}

/// Serves each connection on its own thread; `delay` holds every response
/// so concurrent requests overlap.
fn serve(delay: Duration, respond: impl Fn(usize, &Value) -> (u16, String) + Send + Sync + 'static) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let in_flight = Arc::new(AtomicUsize::new(0));
    let max_in_flight = Arc::new(AtomicUsize::new(0));
    let respond: Arc<Responder> = Arc::new(respond);
    let (reqs, max) = (requests.clone(), max_in_flight.clone());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let (reqs, respond, in_flight, max) = (reqs.clone(), respond.clone(), in_flight.clone(), max.clone());
            std::thread::spawn(move || {
                let Some(req) = read_request(&mut stream) else { return };
                let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                max.fetch_max(now, Ordering::SeqCst);
                let index = {
                    let mut r = reqs.lock().unwrap();
                    r.push(Request { authorization: req.authorization.clone(), body: req.body.clone() });
                    r.len() - 1
                };
                let (status, body) = respond(index, &req.body);
                std::thread::sleep(delay);
                in_flight.fetch_sub(1, Ordering::SeqCst);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            });
        }
    });
    Server { url, requests, max_in_flight }
}

fn chat(content: &str) -> (u16, String) {
    (200, json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string())
}

fn client(server: &Server, concurrency: usize) -> ChatClient {
    let mut cfg = ChatClientConfig::new(&server.url, "test-model");
    cfg.api_key = Some("secret".into());
    cfg.concurrency = concurrency;
    cfg.backoff = Duration::from_millis(1);
    ChatClient::new(cfg, Templates::default()).unwrap()
}

fn sampler(n: usize, retries: u32) -> SamplerConfig {
    SamplerConfig { n_samples: n, max_retries: retries, timeout: Duration::from_secs(5), ..SamplerConfig::extraction() }
}

fn case() -> ArbitrationCase {
    ArbitrationCase::new(
        EntityRef { name: "NPPA".into(), identifier: "4878".into() },
        EntityRef { name: "Water".into(), identifier: "D014867".into() },
        RelationClaim { relation: RelationType::Associate, confidence: 0.8, timestamp: "1999-01-01".parse().unwrap() },
        RelationClaim { relation: RelationType::NegativeCorrelate, confidence: 0.7, timestamp: "1999-12-31".parse().unwrap() },
    )
}

#[test]
fn transient_failures_are_retried() {
    let server = serve(Duration::ZERO, |i, _| if i < 2 { (503, "{}".into()) } else { chat("(a | Associate | b)") });
    let reply = client(&server, 1).complete("hello", 0.7, &sampler(1, 3)).unwrap();
    assert_eq!(reply, "(a | Associate | b)");
    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs.len(), 3);
    assert_eq!(reqs[0].body["model"], "test-model");
    assert_eq!(reqs[0].body["temperature"], 0.7);
    assert_eq!(reqs[0].body["messages"][0]["content"], "hello");
    assert_eq!(reqs[0].authorization.as_deref(), Some("Bearer secret"));
}

#[test]
fn exhausted_retries_and_hard_errors() {
    let server = serve(Duration::ZERO, |_, _| (500, "{}".into()));
    let err = client(&server, 1).complete("x", 0.7, &sampler(1, 2)).unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)), "{err}");
    assert_eq!(server.requests.lock().unwrap().len(), 3);

    let server = serve(Duration::ZERO, |_, _| (400, r#"{"error": "bad"}"#.into()));
    assert!(client(&server, 1).complete("x", 0.7, &sampler(1, 5)).is_err());
    assert_eq!(server.requests.lock().unwrap().len(), 1, "client errors are not retried");

    let server = serve(Duration::ZERO, |_, _| (200, r#"{"choices": []}"#.into()));
    let err = client(&server, 1).complete("x", 0.7, &sampler(1, 0)).unwrap_err();
    assert!(matches!(err, BackendError::InvalidResponse(_)));
}

#[test]
fn every_sample_failing_is_an_error_without_partial_output() {
    let server = serve(Duration::ZERO, |_, _| (502, "{}".into()));
    let err = client(&server, 4).sample("x", &sampler(3, 1)).unwrap_err();
    assert!(matches!(err, BackendError::Transport(ref m) if m.contains("all 3 samples failed")), "{err}");
}

#[test]
fn a_failed_sample_becomes_an_empty_output() {
    let server = serve(Duration::ZERO, |i, _| if i == 0 { (500, "{}".into()) } else { chat("ok") });
    let outputs = client(&server, 1).sample("x", &sampler(4, 0)).unwrap();
    assert_eq!(outputs.len(), 4);
    assert_eq!(outputs.iter().filter(|o| o.is_empty()).count(), 1);
    assert_eq!(outputs.iter().filter(|o| *o == "ok").count(), 3);
}

#[test]
fn in_flight_requests_are_bounded() {
    let server = serve(Duration::from_millis(40), |_, _| chat("ok"));
    let c = client(&server, 2);
    let outputs = std::thread::scope(|s| {
        let handles: Vec<_> = (0..3).map(|_| s.spawn(|| c.sample("x", &sampler(4, 0)).unwrap())).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect::<Vec<_>>()
    });
    assert!(outputs.iter().all(|o| o.len() == 4));
    assert_eq!(server.requests.lock().unwrap().len(), 12);
    let max = server.max_in_flight.load(Ordering::SeqCst);
    assert!((1..=2).contains(&max), "max in flight {max}");
}

#[test]
fn arbitration_verdicts_and_fallback() {
    let cfg = SamplerConfig::arbitration();
    let server = serve(Duration::ZERO, |_, body| {
        let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
        assert!(prompt.contains("Negative_Correlate") && prompt.contains("NPPA (4878)"));
        chat("Verdict: REPLACE")
    });
    let out = client(&server, 1).arbitrate(&case(), &cfg);
    assert_eq!(out.decision, Decision::ReplaceWithIncoming);
    assert_eq!(out.source, DecisionSource::Model);
    assert_eq!(server.requests.lock().unwrap()[0].body["temperature"], 0.2);

    let server = serve(Duration::ZERO, |_, _| chat("It depends."));
    let out = client(&server, 1).arbitrate(&case(), &cfg);
    assert!(out.is_fallback());
    assert_eq!(out.decision, fallback_decision(&case()));
    assert_eq!(out.decision, Decision::KeepExisting);

    let server = serve(Duration::ZERO, |_, _| (503, "{}".into()));
    let out = client(&server, 1).arbitrate(&case(), &SamplerConfig { max_retries: 0, ..cfg });
    assert!(out.is_fallback());
}

#[test]
fn rerank_parses_or_falls_back() {
    let triples: Vec<String> =
        vec!["A —Associate→ B (0.90)".into(), "C —Treat→ D (0.80)".into(), "E —Bind→ F (0.70)".into()];
    let cfg = SamplerConfig::arbitration();
    let server = serve(Duration::ZERO, |_, _| chat("Most relevant first: [2], [0], [1]"));
    let r = client(&server, 1).rerank("treat", &triples, &cfg).unwrap();
    assert_eq!(r.order, vec![2, 0, 1]);
    assert!(r.fallback.is_none());

    let server = serve(Duration::ZERO, |_, _| chat("no idea"));
    let r = client(&server, 1).rerank("treat", &triples, &cfg).unwrap();
    assert_eq!(r.order[0], 1, "lexical fallback puts the Treat triple first");
    assert!(r.fallback.is_some());
    assert!(client(&server, 1).rerank("q", &[], &cfg).is_err());
}

#[test]
fn embedder_validates_dimension() {
    let server = serve(Duration::ZERO, |_, body| {
        let n = if body["input"] == "short" { 3 } else { EMBEDDING_DIM };
        (200, json!({"data": [{"embedding": vec![0.5; n]}]}).to_string())
    });
    let e = HttpEmbedder::new(&server.url, "emb", None, sampler(1, 0)).unwrap();
    assert_eq!(e.embed("atrial natriuretic peptide").unwrap().values().len(), EMBEDDING_DIM);
    assert!(matches!(e.embed("short"), Err(BackendError::InvalidResponse(_))));
    assert!(matches!(e.embed("  "), Err(BackendError::InvalidInput(_))));
}

#[test]
fn annotator_reads_spans_and_rejects_bad_ones() {
    let text = "NPPA lowers water retention";
    let server = serve(Duration::ZERO, |_, body| {
        let end = if body["text"].as_str().unwrap().starts_with("NPPA") { 4 } else { 400 };
        let ann = json!({"annotations": [{"mention": "NPPA", "type": "Gene", "identifier": "4878", "start": 0, "end": end}]});
        (200, ann.to_string())
    });
    let a = HttpAnnotator::new(&server.url, sampler(1, 0)).unwrap();
    let got = a.annotate(text).unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].entity_type, EntityType::Gene);
    assert_eq!(got[0].terminology, EntityType::Gene.default_terminology());
    assert!(a.annotate("other text").is_err());
}
