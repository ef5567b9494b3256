//! Local HTTP server exposing a [`MockBackend`] over the wire protocol.
//!
//! Besides the eight role endpoints it serves `GET /v1/health` (bound roles
//! and model ids) and `GET /v1/stats` (role calls served so far), which
//! integration tests use to assert cache behaviour.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::mock::{MockBackend, MockFixture};
use super::BackendRole;

const WORKERS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthReport {
    pub status: String,
    pub roles: BTreeMap<String, HealthRole>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthRole {
    pub model_id: String,
    pub available: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub calls: u64,
    pub by_role: BTreeMap<String, u64>,
}

struct Shared {
    backend: MockBackend,
    calls: AtomicU64,
    by_role: Mutex<BTreeMap<String, u64>>,
    stop: AtomicBool,
}

pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn start(fixture: MockFixture, addr: &str) -> std::io::Result<Self> {
        let server = tiny_http::Server::http(addr).map_err(std::io::Error::other)?;
        let bound = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("server is not bound to an IP address"))?;
        let server = Arc::new(server);
        let shared = Arc::new(Shared {
            backend: MockBackend::new(fixture),
            calls: AtomicU64::new(0),
            by_role: Mutex::new(BTreeMap::new()),
            stop: AtomicBool::new(false),
        });
        let workers = (0..WORKERS)
            .map(|_| {
                let (server, shared) = (server.clone(), shared.clone());
                std::thread::spawn(move || {
                    while !shared.stop.load(Ordering::SeqCst) {
                        match server.recv_timeout(Duration::from_millis(50)) {
                            Ok(Some(request)) => handle(&shared, request),
                            Ok(None) => {}
                            Err(e) => log::debug!("mock server: {e}"),
                        }
                    }
                })
            })
            .collect();
        Ok(Self {
            addr: bound,
            shared,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Role requests served so far (health and stats excluded).
    pub fn calls(&self) -> u64 {
        self.shared.calls.load(Ordering::SeqCst)
    }

    /// Blocks until the workers exit, which only happens after [`MockServer::shutdown`]
    /// from another handle; used by the `mock-serve` command.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_workers();
    }

    fn stop_workers(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop_workers();
    }
}

fn json_response(status: u16, body: Vec<u8>) -> tiny_http::Response<std::io::Cursor<Vec<u8>>> {
    tiny_http::Response::from_data(body)
        .with_status_code(status)
        .with_header(
            "Content-Type: application/json"
                .parse::<tiny_http::Header>()
                .expect("static header"),
        )
}

fn error_body(code: &str, message: &str) -> Vec<u8> {
    serde_json::to_vec(&serde_json::json!({"error": {"code": code, "message": message}}))
        .expect("error body")
}

fn handle(shared: &Shared, mut request: tiny_http::Request) {
    let url = request.url().split('?').next().unwrap_or("").to_string();
    let method = request.method().clone();
    let response = match (method, url.strip_prefix("/v1/")) {
        (tiny_http::Method::Get, Some("health")) => {
            let fixture = shared.backend.fixture();
            let roles = BackendRole::ALL
                .into_iter()
                .map(|r| {
                    (
                        r.as_str().to_string(),
                        HealthRole {
                            model_id: shared.backend.model_id(r),
                            available: !fixture.unavailable.contains(&r),
                        },
                    )
                })
                .collect();
            let report = HealthReport {
                status: "ok".into(),
                roles,
            };
            json_response(200, serde_json::to_vec(&report).expect("health"))
        }
        (tiny_http::Method::Get, Some("stats")) => {
            let report = StatsReport {
                calls: shared.calls.load(Ordering::SeqCst),
                by_role: shared.by_role.lock().expect("stats lock").clone(),
            };
            json_response(200, serde_json::to_vec(&report).expect("stats"))
        }
        (tiny_http::Method::Post, Some(path)) => match BackendRole::from_endpoint(path) {
            Some(role) => {
                shared.calls.fetch_add(1, Ordering::SeqCst);
                *shared
                    .by_role
                    .lock()
                    .expect("stats lock")
                    .entry(role.as_str().to_string())
                    .or_default() += 1;
                let mut body = Vec::new();
                match request.as_reader().read_to_end(&mut body) {
                    Ok(_) => match shared.backend.handle(role, &body) {
                        Ok(bytes) => json_response(200, bytes),
                        Err(e) => json_response(e.status, e.body()),
                    },
                    Err(e) => json_response(400, error_body("bad_request", &e.to_string())),
                }
            }
            None => json_response(404, error_body("unknown_endpoint", &url)),
        },
        _ => json_response(404, error_body("unknown_endpoint", &url)),
    };
    if let Err(e) = request.respond(response) {
        log::debug!("mock server: failed to respond: {e}");
    }
}
