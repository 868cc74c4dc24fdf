//! A remote state server: the local-file backend exposed over HTTP.
//!
//! | route | success | failure |
//! |---|---|---|
//! | `GET /state` | 200, state JSON | 404 when nothing was written yet |
//! | `PUT /state?expected_serial=N` | 200, `{"serial": N+1}` | 409 serial conflict, 423 lock not held |
//! | `POST /state/lock` (body: lock info) | 200, token | 423, holder's lock info |
//! | `DELETE /state/lock` (`Lock-Token` header) | 200 | 403 wrong token, 409 not locked |

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Method, Request, Response, Server};

use super::{Backend, LocalBackend, LockInfo, StateError, StateSnapshot};

pub const LOCK_TOKEN_HEADER: &str = "Lock-Token";

/// A running server. Stops when dropped.
pub struct StateServer {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

const WORKERS: usize = 4;

impl StateServer {
    /// Binds `addr` (port 0 picks a free port) and serves `backend` on
    /// background threads.
    pub fn start(backend: LocalBackend, addr: &str) -> std::io::Result<StateServer> {
        let server = Server::http(addr).map_err(std::io::Error::other)?;
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("not bound to an IP address"))?;
        let server = Arc::new(server);
        let backend = Arc::new(backend);
        let workers = (0..WORKERS)
            .map(|_| {
                let server = server.clone();
                let backend = backend.clone();
                std::thread::spawn(move || {
                    while let Ok(request) = server.recv() {
                        handle(&backend, request);
                    }
                })
            })
            .collect();
        Ok(StateServer {
            server,
            addr: local,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for StateServer {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn json_header() -> Header {
    Header::from_bytes("Content-Type", "application/json").expect("static header")
}

fn reply(request: Request, status: u16, body: String) {
    let response = Response::from_string(body)
        .with_status_code(status)
        .with_header(json_header());
    if let Err(e) = request.respond(response) {
        log::warn!("state server: failed to respond: {e}");
    }
}

fn error_body(message: impl std::fmt::Display) -> String {
    serde_json::json!({ "error": message.to_string() }).to_string()
}

fn header_value(request: &Request, name: &'static str) -> Option<String> {
    request
        .headers()
        .iter()
        .find(|h| h.field.equiv(name))
        .map(|h| h.value.as_str().to_string())
}

fn query_param<'a>(url: &'a str, key: &str) -> Option<&'a str> {
    let query = url.split_once('?')?.1;
    query
        .split('&')
        .filter_map(|pair| pair.split_once('='))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v)
}

fn handle(backend: &LocalBackend, mut request: Request) {
    let path = request.url().split('?').next().unwrap_or("").to_string();
    let mut body = String::new();
    if let Err(e) = request.as_reader().read_to_string(&mut body) {
        return reply(request, 400, error_body(format!("unreadable body: {e}")));
    }
    log::debug!("state server: {} {}", request.method(), request.url());
    match (request.method(), path.as_str()) {
        (Method::Get, "/state") => match backend.read_state() {
            Ok(s) if s.serial == 0 => reply(request, 404, error_body("no state stored")),
            Ok(s) => match s.to_json_string() {
                Ok(text) => reply(request, 200, text),
                Err(e) => reply(request, 500, error_body(e)),
            },
            Err(e) => reply(request, 500, error_body(e)),
        },
        (Method::Put, "/state") => {
            let Some(expected) = query_param(request.url(), "expected_serial")
                .and_then(|v| v.parse::<u64>().ok())
            else {
                return reply(request, 400, error_body("expected_serial query parameter required"));
            };
            let token = header_value(&request, LOCK_TOKEN_HEADER).unwrap_or_default();
            let snapshot = match StateSnapshot::from_json_str(&body) {
                Ok(s) => s,
                Err(e) => return reply(request, 400, error_body(e)),
            };
            match backend.write_state(&snapshot, expected, &token) {
                Ok(serial) => reply(request, 200, serde_json::json!({ "serial": serial }).to_string()),
                Err(StateError::SerialConflict { expected, stored }) => reply(
                    request,
                    409,
                    serde_json::json!({
                        "error": format!("serial conflict: expected {expected}, stored {stored}"),
                        "stored_serial": stored,
                    })
                    .to_string(),
                ),
                Err(e @ StateError::LockNotHeld) => reply(request, 423, error_body(e)),
                Err(e @ (StateError::Io(_) | StateError::Corrupt(_))) => {
                    reply(request, 500, error_body(e))
                }
                Err(e) => reply(request, 400, error_body(e)),
            }
        }
        (Method::Post, "/state/lock") => {
            let info: LockInfo = match serde_json::from_str(&body) {
                Ok(i) => i,
                Err(e) => return reply(request, 400, error_body(format!("bad lock info: {e}"))),
            };
            match backend.lock(&info) {
                Ok(token) => reply(request, 200, token),
                Err(StateError::AlreadyLocked(holder)) => reply(
                    request,
                    423,
                    serde_json::to_string(&holder).expect("lock info serializes"),
                ),
                Err(e) => reply(request, 500, error_body(e)),
            }
        }
        (Method::Delete, "/state/lock") => {
            let token = header_value(&request, LOCK_TOKEN_HEADER).unwrap_or_default();
            match backend.unlock(&token) {
                Ok(()) => reply(request, 200, "{}".to_string()),
                Err(e @ StateError::WrongToken) => reply(request, 403, error_body(e)),
                Err(e @ StateError::NotLocked) => reply(request, 409, error_body(e)),
                Err(e) => reply(request, 500, error_body(e)),
            }
        }
        _ => reply(request, 404, error_body(format!("no route for {path}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{HttpBackend, LockOperation};

    #[test]
    fn remote_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let server =
            StateServer::start(LocalBackend::new(dir.path().join("s.tfstate")), "127.0.0.1:0")
                .unwrap();
        let client = HttpBackend::new(server.url());
        let empty = client.read_state().unwrap();
        assert_eq!(empty.serial, 0);

        let token = client
            .lock(&LockInfo::new("a", LockOperation::Apply))
            .unwrap();
        match client.lock(&LockInfo::new("b", LockOperation::Plan)) {
            Err(StateError::AlreadyLocked(h)) => assert_eq!(h.holder, "a"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            client.write_state(&empty, 0, "bogus"),
            Err(StateError::LockNotHeld)
        ));
        assert_eq!(client.write_state(&empty, 0, &token).unwrap(), 1);
        let one = client.read_state().unwrap();
        assert_eq!((one.serial, &one.lineage), (1, &empty.lineage));
        assert!(matches!(
            client.write_state(&empty, 0, &token),
            Err(StateError::SerialConflict { expected: 0, stored: 1 })
        ));
        assert!(matches!(client.unlock("bogus"), Err(StateError::WrongToken)));
        client.unlock(&token).unwrap();
        assert!(matches!(client.unlock(&token), Err(StateError::NotLocked)));
    }
}
