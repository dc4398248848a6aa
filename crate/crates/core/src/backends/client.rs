use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::protocol::{BackendRequest, BackendResponse, Health, Seat, Status};

/// Failure of a single exchange, before retry policy is applied.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    /// Connection-level failure; worth retrying.
    #[error("transport: {0}")]
    Io(String),
    /// The peer rejected or garbled the exchange; retrying will not help.
    #[error("protocol: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("{seat} transport failure after {attempts} attempt(s): {message}")]
    Transport { seat: Seat, attempts: u32, message: String },
    #[error("{seat} protocol error: {message}")]
    Protocol { seat: Seat, message: String },
    #[error("{seat} returned fatal status after {attempts} attempt(s): {message}")]
    Fatal { seat: Seat, attempts: u32, message: String },
}

impl BackendError {
    pub fn seat(&self) -> Seat {
        match self {
            BackendError::Transport { seat, .. } | BackendError::Protocol { seat, .. } | BackendError::Fatal { seat, .. } => {
                *seat
            }
        }
    }

    pub fn attempts(&self) -> u32 {
        match self {
            BackendError::Transport { attempts, .. } | BackendError::Fatal { attempts, .. } => *attempts,
            BackendError::Protocol { .. } => 1,
        }
    }
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &BackendRequest) -> Result<BackendResponse, TransportError>;

    fn health(&self) -> Result<Health, TransportError>;

    /// Short description recorded in run manifests.
    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_delay_ms: 200, max_delay_ms: 5_000 }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy { max_attempts, base_delay_ms: 0, max_delay_ms: 0 }
    }

    /// Delay before attempt `attempt + 1`, doubling from the base delay.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(16);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub seat: Seat,
    pub request_id: String,
    pub attempts: u32,
}

/// Shared, ordered log of backend calls.
#[derive(Debug, Clone, Default)]
pub struct CallLog(Arc<Mutex<Vec<CallRecord>>>);

impl CallLog {
    pub fn push(&self, record: CallRecord) {
        self.0.lock().expect("call log lock").push(record);
    }

    pub fn snapshot(&self) -> Vec<CallRecord> {
        self.0.lock().expect("call log lock").clone()
    }

    pub fn seats(&self) -> Vec<Seat> {
        self.snapshot().into_iter().map(|r| r.seat).collect()
    }

    pub fn clear(&self) {
        self.0.lock().expect("call log lock").clear();
    }
}

/// One model seat: where it lives and how calls to it are retried.
#[derive(Clone)]
pub struct BackendHandle {
    pub seat: Seat,
    pub endpoint: String,
    /// Opaque model parameters token forwarded untouched.
    pub params: String,
    pub retry: RetryPolicy,
    transport: Arc<dyn Transport>,
    log: CallLog,
}

impl std::fmt::Debug for BackendHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendHandle").field("seat", &self.seat).field("endpoint", &self.endpoint).finish()
    }
}

impl BackendHandle {
    pub fn new(seat: Seat, transport: Arc<dyn Transport>, retry: RetryPolicy, log: CallLog) -> Self {
        BackendHandle { seat, endpoint: transport.describe(), params: String::new(), retry, transport, log }
    }

    pub fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        call_backend(self, request)
    }
}

/// Send a request, retrying transport failures and `retryable` statuses with
/// exponential backoff. Protocol errors are never retried.
pub fn call_backend(handle: &BackendHandle, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
    let seat = handle.seat;
    if request.seat() != seat {
        return Err(BackendError::Protocol {
            seat,
            message: format!("{} request sent to the {} seat", request.seat(), seat),
        });
    }
    let max = handle.retry.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        let last_failure = match handle.transport.send(request) {
            Err(TransportError::Protocol(message)) => return Err(BackendError::Protocol { seat, message }),
            Err(TransportError::Io(message)) => BackendError::Transport { seat, attempts: attempt, message },
            Ok(resp) => {
                if resp.request_id != request.request_id {
                    return Err(BackendError::Protocol {
                        seat,
                        message: format!("response id {} does not echo {}", resp.request_id, request.request_id),
                    });
                }
                match resp.status {
                    Status::Ok => {
                        if !resp.payload.fits(seat) {
                            return Err(BackendError::Protocol {
                                seat,
                                message: format!("unexpected payload kind for {seat}"),
                            });
                        }
                        handle.log.push(CallRecord { seat, request_id: request.request_id.clone(), attempts: attempt });
                        return Ok(resp);
                    }
                    Status::Fatal => {
                        return Err(BackendError::Fatal {
                            seat,
                            attempts: attempt,
                            message: resp.message.unwrap_or_default(),
                        })
                    }
                    Status::Retryable => BackendError::Fatal {
                        seat,
                        attempts: attempt,
                        message: format!("still retryable: {}", resp.message.unwrap_or_default()),
                    },
                }
            }
        };
        if attempt >= max {
            return Err(last_failure);
        }
        std::thread::sleep(handle.retry.delay(attempt));
    }
}

/// JSON over HTTP to `{base}/v1/<seat>`.
pub struct HttpTransport {
    base_url: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        HttpTransport { base_url: base_url.into().trim_end_matches('/').to_string(), agent: ureq::Agent::new_with_config(config) }
    }

    fn classify(err: ureq::Error) -> TransportError {
        match err {
            ureq::Error::Io(_) | ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
                TransportError::Io(err.to_string())
            }
            other => TransportError::Protocol(other.to_string()),
        }
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &BackendRequest) -> Result<BackendResponse, TransportError> {
        let started = Instant::now();
        let url = format!("{}{}", self.base_url, request.seat().path());
        let mut resp = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .send(request.to_json())
            .map_err(Self::classify)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(Self::classify)?;
        if status >= 500 {
            return Err(TransportError::Io(format!("HTTP {status}: {body}")));
        }
        if status >= 400 {
            return Err(TransportError::Protocol(format!("HTTP {status}: {body}")));
        }
        let mut parsed: BackendResponse = serde_json::from_str(&body)
            .map_err(|e| TransportError::Protocol(format!("HTTP {status}, undecodable body: {e}")))?;
        if parsed.timing_ms == 0 {
            parsed.timing_ms = started.elapsed().as_millis() as u64;
        }
        Ok(parsed)
    }

    fn health(&self) -> Result<Health, TransportError> {
        let url = format!("{}/v1/health", self.base_url);
        let mut resp = self.agent.get(&url).call().map_err(Self::classify)?;
        let body = resp.body_mut().read_to_string().map_err(Self::classify)?;
        serde_json::from_str(&body).map_err(|e| TransportError::Protocol(e.to_string()))
    }

    fn describe(&self) -> String {
        self.base_url.clone()
    }
}
