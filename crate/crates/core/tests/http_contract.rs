mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use common::*;
use scotd::client::{ClientConfig, ClientError, CompletionClient, CompletionModel, CompletionRequest};
use scotd::embedder::{Embedder, EmbeddingSource, RemoteEmbedder};
use scotd::http::{HttpService, ReqwestTransport, RetryPolicy, ServiceError};

type Handler = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;
type Seen = Arc<Mutex<Vec<(Value, Option<String>)>>>;

struct Server {
    url: String,
    seen: Seen,
}

/// Serves POST requests on a free local port with `handler(call_index, body)`.
fn serve(handler: Arc<Handler>) -> Server {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let port = server.server_addr().to_ip().unwrap().port();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let calls = AtomicUsize::new(0);
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let value: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
            let auth = req
                .headers()
                .iter()
                .find(|h| h.field.equiv("Authorization"))
                .map(|h| h.value.to_string());
            log.lock().unwrap().push((value.clone(), auth));
            let (status, out) = handler(calls.fetch_add(1, Ordering::SeqCst), &value);
            let resp = tiny_http::Response::from_string(out)
                .with_status_code(status)
                .with_header("Content-Type: application/json".parse::<tiny_http::Header>().unwrap());
            let _ = req.respond(resp);
        }
    });
    Server {
        url: format!("http://127.0.0.1:{port}/v1/completions"),
        seen,
    }
}

fn echo(n: usize, lp: bool) -> String {
    let choices: Vec<Value> = (0..n)
        .rev()
        .map(|i| {
            json!({
                "index": i,
                "text": format!(" reason {i}. So the answer is: (a)"),
                "finish_reason": "stop",
                "logprobs": if lp { json!({"token_logprobs": [null, -0.5, -1.5]}) } else { Value::Null },
            })
        })
        .collect();
    json!({ "choices": choices }).to_string()
}

fn config(url: &str) -> ClientConfig {
    let mut cfg = ClientConfig::new(url, "teacher-x");
    cfg.retry = RetryPolicy::no_delay(3);
    cfg.timeout = Duration::from_secs(10);
    cfg.api_key = Some("sk-test".into());
    cfg
}

#[test]
fn request_body_and_response_order() {
    let s = serve(Arc::new(|_, body: &Value| (200, echo(body["n"].as_u64().unwrap() as usize, true))));
    let client = CompletionClient::new(config(&s.url)).unwrap();
    let mut req = CompletionRequest::new("teacher-x", "Q: where?\nA:", 1.0, 4);
    req.want_logprobs = true;
    let out = client.complete(&req).unwrap();
    assert_eq!(out.len(), 4);
    for (i, c) in out.iter().enumerate() {
        assert!(c.text.starts_with(&format!(" reason {i}.")));
        assert_eq!(c.token_logprobs.as_deref(), Some(&[-0.5, -1.5][..]));
    }
    let seen = s.seen.lock().unwrap();
    let (body, auth) = &seen[0];
    assert_eq!(body["model"], "teacher-x");
    assert_eq!(body["prompt"], "Q: where?\nA:");
    assert_eq!(body["n"], 4);
    assert_eq!(body["temperature"], 1.0);
    assert_eq!(body["max_tokens"], 256);
    assert_eq!(body["stop"], json!(["\n\n"]));
    assert_eq!(body["logprobs"], 1);
    assert_eq!(auth.as_deref(), Some("Bearer sk-test"));
}

#[test]
fn retries_server_errors_and_rate_limits() {
    let s = serve(Arc::new(|call, body: &Value| match call {
        0 => (503, "busy".into()),
        1 => (429, "slow down".into()),
        _ => (200, echo(body["n"].as_u64().unwrap() as usize, false)),
    }));
    let client = CompletionClient::new(config(&s.url)).unwrap();
    let out = client.complete(&CompletionRequest::new("teacher-x", "p", 0.0, 1)).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(s.seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let s = serve(Arc::new(|_, _: &Value| (400, r#"{"error":"bad prompt"}"#.into())));
    let client = CompletionClient::new(config(&s.url)).unwrap();
    let err = client.complete(&CompletionRequest::new("teacher-x", "p", 0.0, 1)).unwrap_err();
    assert!(matches!(err, ClientError::Service(ServiceError::Status { status: 400, .. })), "{err}");
    assert!(err.is_upstream());
    assert_eq!(s.seen.lock().unwrap().len(), 1);
}

#[test]
fn exhausted_retries_surface_the_last_error() {
    let s = serve(Arc::new(|_, _: &Value| (429, String::new())));
    let client = CompletionClient::new(config(&s.url)).unwrap();
    let err = client.complete(&CompletionRequest::new("teacher-x", "p", 0.0, 1)).unwrap_err();
    assert!(matches!(err, ClientError::Service(ServiceError::RateLimited { attempts: 4 })), "{err}");
}

#[test]
fn wrong_choice_count_is_rejected() {
    let s = serve(Arc::new(|_, _: &Value| (200, echo(2, false))));
    let client = CompletionClient::new(config(&s.url)).unwrap();
    let err = client.complete(&CompletionRequest::new("teacher-x", "p", 1.0, 3)).unwrap_err();
    assert!(matches!(err, ClientError::CountMismatch { expected: 3, got: 2 }), "{err}");
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let mut cfg = config("http://127.0.0.1:9/v1/completions");
    cfg.retry = RetryPolicy::no_delay(1);
    let client = CompletionClient::new(cfg).unwrap();
    let err = client.complete(&CompletionRequest::new("teacher-x", "p", 0.0, 1)).unwrap_err();
    assert!(matches!(err, ClientError::Service(ServiceError::Transport { attempts: 2, .. })), "{err}");
}

#[test]
fn cache_serves_repeat_runs_without_requests() {
    let s = serve(Arc::new(|_, body: &Value| (200, echo(body["n"].as_u64().unwrap() as usize, true))));
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(&s.url);
    cfg.cache_dir = Some(dir.path().to_path_buf());
    let mut req = CompletionRequest::new("teacher-x", "Q: cached?\nA:", 1.0, 3);
    req.want_logprobs = true;

    let first = CompletionClient::new(cfg.clone()).unwrap().complete(&req).unwrap();
    let fresh = CompletionClient::new(cfg.clone()).unwrap();
    assert_eq!(fresh.complete(&req).unwrap(), first);
    assert_eq!(fresh.network_calls(), 0);

    // growing n only fetches the new indices
    req.num_samples = 5;
    let grown = fresh.complete(&req).unwrap();
    assert_eq!(&grown[..3], &first[..]);
    assert_eq!(fresh.network_calls(), 1);
    assert_eq!(s.seen.lock().unwrap().last().unwrap().0["n"], 2);
}

#[test]
fn cache_hits_when_the_server_never_sends_logprobs() {
    let s = serve(Arc::new(|_, body: &Value| (200, echo(body["n"].as_u64().unwrap() as usize, false))));
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(&s.url);
    cfg.cache_dir = Some(dir.path().to_path_buf());
    let mut req = CompletionRequest::new("teacher-x", "Q: no logprobs?\nA:", 1.0, 3);
    req.want_logprobs = false;

    // cached without asking for logprobs: a later request that wants them refetches
    CompletionClient::new(cfg.clone()).unwrap().complete(&req).unwrap();
    req.want_logprobs = true;
    let asked = CompletionClient::new(cfg.clone()).unwrap();
    let first = asked.complete(&req).unwrap();
    assert_eq!(asked.network_calls(), 1);
    assert!(first.iter().all(|c| c.token_logprobs.is_none()));

    let again = CompletionClient::new(cfg).unwrap();
    assert_eq!(again.complete(&req).unwrap(), first);
    assert_eq!(again.network_calls(), 0);
}

#[test]
fn remote_embedder_over_http() {
    let s = serve(Arc::new(|_, body: &Value| {
        let data: Vec<Value> = body["input"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| {
                let len = t.as_str().unwrap().len() as f64;
                json!({"embedding": [len, 1.0, 0.0]})
            })
            .collect();
        (200, json!({"data": data}).to_string())
    }));
    let transport = Arc::new(ReqwestTransport::new(Duration::from_secs(10)).unwrap());
    let service = HttpService::new(s.url.clone(), None, RetryPolicy::no_delay(0), transport);
    let emb = RemoteEmbedder::new("mini", service, None);
    let out = emb.embed_batch(&["ab".to_string(), "abcd".to_string()]).unwrap();
    assert_eq!(out[0].source(), EmbeddingSource::Remote);
    let norm: f64 = out[1].vector().iter().map(|x| x * x).sum();
    assert!((norm - 1.0).abs() < 1e-12);
    assert_eq!(s.seen.lock().unwrap()[0].0["model"], "mini");
}

#[test]
fn mock_transport_speaks_the_same_contract() {
    let task = task4();
    let insts = instances(&task, 3, 1);
    let teacher = MockTeacher::new(&task, &insts, 1.0, 5);
    let direct = teacher.generate("Q: synthetic question number 1?\nA:", 1.0, 4, true);
    let client = CompletionClient::with_store(ClientConfig::new("mock", "mock-teacher"), Arc::new(MockTransport::new(teacher)), None);
    let mut req = CompletionRequest::new("mock-teacher", "Q: synthetic question number 1?\nA:", 1.0, 4);
    req.want_logprobs = true;
    assert_eq!(client.complete(&req).unwrap(), direct);
}
