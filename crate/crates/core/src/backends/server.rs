//! HTTP front end for the mock service.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;
use tiny_http::{Header, Method, Request, Response, Server};

use super::mock::MockService;
use super::protocol::Seat;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {message}")]
    Bind { addr: String, message: String },
}

/// A running server; dropping it stops the accept loop.
pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl MockServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Block until the server is stopped from another thread or the process exits.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Serve every seat of `service` on `addr` (use port 0 for an ephemeral port).
pub fn serve_mock(service: Arc<MockService>, addr: &str, threads: usize) -> Result<MockServer, ServeError> {
    let server = Server::http(addr).map_err(|e| ServeError::Bind { addr: addr.to_string(), message: e.to_string() })?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| ServeError::Bind { addr: addr.to_string(), message: "not an IP listener".into() })?;
    let server = Arc::new(server);
    let stop = Arc::new(AtomicBool::new(false));
    let workers = (0..threads.max(1))
        .map(|_| {
            let (server, stop, service) = (server.clone(), stop.clone(), service.clone());
            std::thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match server.recv_timeout(Duration::from_millis(50)) {
                        Ok(Some(req)) => respond(&service, req),
                        Ok(None) => {}
                        Err(_) => break,
                    }
                }
            })
        })
        .collect();
    Ok(MockServer { addr: bound, stop, workers })
}

fn json_response(status: u16, body: String) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    Response::from_string(body).with_status_code(status).with_header(header)
}

fn respond(service: &MockService, mut req: Request) {
    let url = req.url().to_string();
    let method = req.method().clone();
    let response = match (method, url.as_str()) {
        (Method::Get, "/v1/health") => json_response(200, serde_json::to_string(&service.health()).expect("health")),
        (Method::Post, path) if path.starts_with("/v1/") => match Seat::parse(&path[4..]) {
            Some(seat) => {
                let mut body = String::new();
                match req.as_reader().read_to_string(&mut body) {
                    Ok(_) => {
                        let (status, text) = service.handle_json(Some(seat), &body);
                        json_response(status, text)
                    }
                    Err(e) => json_response(400, format!("{{\"error\":\"unreadable body: {e}\"}}")),
                }
            }
            None => json_response(404, format!("{{\"error\":\"no seat at {path}\"}}")),
        },
        (_, path) => json_response(404, format!("{{\"error\":\"no route {path}\"}}")),
    };
    let _ = req.respond(response);
}
