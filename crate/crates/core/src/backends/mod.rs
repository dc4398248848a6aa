//! Model seats: the wire protocol, the client with retries, the mock service
//! and its HTTP front end.

pub mod client;
pub mod mock;
pub mod protocol;
pub mod server;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

pub use client::{call_backend, BackendError, BackendHandle, CallLog, CallRecord, HttpTransport, RetryPolicy, Transport, TransportError};
pub use mock::{MockConfig, MockService};
pub use protocol::*;

/// Sends requests straight into a [`MockService`], through the JSON codec so
/// in-process and HTTP runs exercise the same bytes.
pub struct InProcessTransport {
    service: Arc<MockService>,
}

impl InProcessTransport {
    pub fn new(service: Arc<MockService>) -> Self {
        InProcessTransport { service }
    }
}

impl Transport for InProcessTransport {
    fn send(&self, request: &BackendRequest) -> Result<BackendResponse, TransportError> {
        let (status, body) = self.service.handle_json(Some(request.seat()), &request.to_json());
        if (400..500).contains(&status) {
            return Err(TransportError::Protocol(body));
        }
        serde_json::from_str(&body).map_err(|e| TransportError::Protocol(e.to_string()))
    }

    fn health(&self) -> Result<Health, TransportError> {
        Ok(self.service.health())
    }

    fn describe(&self) -> String {
        "mock://in-process".into()
    }
}

/// One handle per seat for a run, sharing one call log.
#[derive(Clone)]
pub struct Backends {
    handles: BTreeMap<Seat, BackendHandle>,
    log: CallLog,
    mock: Option<Arc<MockService>>,
}

impl Backends {
    pub fn mock(service: Arc<MockService>, retry: RetryPolicy) -> Self {
        let log = CallLog::default();
        let transport: Arc<dyn Transport> = Arc::new(InProcessTransport::new(service.clone()));
        let handles = Seat::ALL
            .into_iter()
            .map(|seat| (seat, BackendHandle::new(seat, transport.clone(), retry, log.clone())))
            .collect();
        Backends { handles, log, mock: Some(service) }
    }

    /// HTTP seats. `endpoints` maps seats to base URLs; missing seats fall
    /// back to `default_url`.
    pub fn remote(
        default_url: &str,
        endpoints: &BTreeMap<Seat, String>,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Self {
        let log = CallLog::default();
        let handles = Seat::ALL
            .into_iter()
            .map(|seat| {
                let url = endpoints.get(&seat).map(String::as_str).unwrap_or(default_url);
                let transport: Arc<dyn Transport> = Arc::new(HttpTransport::new(url, timeout));
                (seat, BackendHandle::new(seat, transport, retry, log.clone()))
            })
            .collect();
        Backends { handles, log, mock: None }
    }

    pub fn handle(&self, seat: Seat) -> &BackendHandle {
        &self.handles[&seat]
    }

    pub fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        call_backend(self.handle(request.seat()), request)
    }

    pub fn log(&self) -> &CallLog {
        &self.log
    }

    /// The in-process mock, when the seats are mocked.
    pub fn mock_service(&self) -> Option<&Arc<MockService>> {
        self.mock.as_ref()
    }

    /// Endpoint description per seat, for manifests.
    pub fn describe(&self) -> BTreeMap<String, String> {
        self.handles.iter().map(|(s, h)| (s.as_str().to_string(), h.endpoint.clone())).collect()
    }
}

impl std::fmt::Debug for Backends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map().entries(self.describe()).finish()
    }
}
