//! JSON-over-HTTP POST with bounded exponential-backoff retries.

use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// A blocking JSON POST. Swapped for an in-process fake in tests.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, body: &Value, api_key: Option<&str>) -> Result<HttpResponse, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(&self, url: &str, body: &Value, api_key: Option<&str>) -> Result<HttpResponse, TransportError> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.min(20)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response body: {0}")]
    Malformed(String),
}

#[derive(Clone)]
pub struct HttpService {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub retry: RetryPolicy,
    transport: Arc<dyn Transport>,
}

impl std::fmt::Debug for HttpService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpService")
            .field("endpoint", &self.endpoint)
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl HttpService {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, retry: RetryPolicy, transport: Arc<dyn Transport>) -> Self {
        HttpService {
            endpoint: endpoint.into(),
            api_key,
            retry,
            transport,
        }
    }

    pub fn post(&self, body: &Value) -> Result<Value, ServiceError> {
        let mut attempt = 0u32;
        loop {
            let outcome = self
                .transport
                .post_json(&self.endpoint, body, self.api_key.as_deref());
            let retryable = match outcome {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    return serde_json::from_str(&resp.body)
                        .map_err(|e| ServiceError::Malformed(e.to_string()));
                }
                Ok(resp) if resp.status == 429 => ServiceError::RateLimited { attempts: attempt + 1 },
                Ok(resp) if resp.status >= 500 => ServiceError::Status {
                    status: resp.status,
                    body: resp.body,
                },
                Ok(resp) => {
                    return Err(ServiceError::Status {
                        status: resp.status,
                        body: resp.body,
                    })
                }
                Err(e) => ServiceError::Transport {
                    attempts: attempt + 1,
                    message: e.0,
                },
            };
            if attempt >= self.retry.max_retries {
                return Err(retryable);
            }
            let wait = self.retry.delay(attempt);
            tracing::debug!(attempt, ?wait, error = %retryable, "retrying request");
            std::thread::sleep(wait);
            attempt += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Scripted(Mutex<Vec<Result<HttpResponse, TransportError>>>);

    impl Transport for Scripted {
        fn post_json(&self, _: &str, _: &Value, _: Option<&str>) -> Result<HttpResponse, TransportError> {
            self.0.lock().unwrap().remove(0)
        }
    }

    fn resp(status: u16, body: &str) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse {
            status,
            body: body.into(),
        })
    }

    fn service(script: Vec<Result<HttpResponse, TransportError>>, retries: u32) -> (HttpService, Arc<Scripted>) {
        let t = Arc::new(Scripted(Mutex::new(script)));
        (
            HttpService::new("http://x", None, RetryPolicy::no_delay(retries), t.clone()),
            t,
        )
    }

    #[test]
    fn retries_transient_failures() {
        let (svc, t) = service(
            vec![
                Err(TransportError("reset".into())),
                resp(503, "busy"),
                resp(429, ""),
                resp(200, r#"{"ok":true}"#),
            ],
            3,
        );
        assert_eq!(svc.post(&Value::Null).unwrap()["ok"], true);
        assert!(t.0.lock().unwrap().is_empty());
    }

    #[test]
    fn rate_limit_surfaces_after_budget() {
        let (svc, _) = service(vec![resp(429, ""), resp(429, ""), resp(429, "")], 2);
        assert!(matches!(svc.post(&Value::Null), Err(ServiceError::RateLimited { attempts: 3 })));
    }

    #[test]
    fn client_errors_and_bad_bodies_are_not_retried() {
        let (svc, t) = service(vec![resp(400, "bad"), resp(200, "{}")], 3);
        assert!(matches!(svc.post(&Value::Null), Err(ServiceError::Status { status: 400, .. })));
        assert_eq!(t.0.lock().unwrap().len(), 1);
        let (svc, _) = service(vec![resp(200, "not json")], 3);
        assert!(matches!(svc.post(&Value::Null), Err(ServiceError::Malformed(_))));
    }

    #[test]
    fn backoff_is_exponential_and_capped() {
        let p = RetryPolicy {
            max_retries: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_secs(1),
        };
        assert_eq!(p.delay(0), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(400));
        assert_eq!(p.delay(9), Duration::from_secs(1));
        assert_eq!(p.delay(40), Duration::from_secs(1));
    }
}
