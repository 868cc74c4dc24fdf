//! A small simulated cloud served over HTTP.
//!
//! Routes:
//!
//! - `POST /v1/<collection>`, `GET /v1/<collection>`,
//!   `GET|PUT|DELETE /v1/<collection>/<id>`
//! - `POST /admin/faults` with `{"collection", "operation", "count", "status"}`
//! - `POST /admin/reset`
//! - `GET /admin/journal`: every create, update and delete so far, in order
//!
//! Collections are `vpcs`, `subnets`, `security_groups`, `instances` and
//! `load_balancers`. Ids look like `vpc-000001`; counters never go back,
//! even after deletes (only `/admin/reset` restarts them).
//!
//! ```
//! let server = mockcloud::spawn("127.0.0.1:0").unwrap();
//! let reply = server.cloud().handle("POST", "/v1/vpcs", br#"{"cidr":"10.0.0.0/16"}"#);
//! assert_eq!(reply.status, 201);
//! assert_eq!(reply.body_text(), r#"{"id":"vpc-000001","cidr":"10.0.0.0/16"}"#);
//! ```

mod store;

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

pub use store::{Cloud, Collection, Fault, JournalEntry, Operation, Reply};

const WORKERS: usize = 8;

/// A server running on background threads. Stops when dropped.
pub struct MockCloudServer {
    server: Arc<tiny_http::Server>,
    cloud: Arc<Cloud>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl MockCloudServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `http://host:port`.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn cloud(&self) -> &Arc<Cloud> {
        &self.cloud
    }

    /// Blocks until the server is unblocked from another thread.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn stop(&self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
    }
}

impl Drop for MockCloudServer {
    fn drop(&mut self) {
        self.stop();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Serves a fresh, empty cloud on `addr` (port 0 picks a free port).
pub fn spawn(addr: &str) -> std::io::Result<MockCloudServer> {
    serve(Arc::new(Cloud::new()), addr)
}

/// Serves `cloud` on `addr`.
pub fn serve(cloud: Arc<Cloud>, addr: &str) -> std::io::Result<MockCloudServer> {
    let server = tiny_http::Server::http(addr).map_err(std::io::Error::other)?;
    let local = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| std::io::Error::other("not bound to an IP address"))?;
    let server = Arc::new(server);
    let workers = (0..WORKERS)
        .map(|_| {
            let server = server.clone();
            let cloud = cloud.clone();
            std::thread::spawn(move || {
                while let Ok(request) = server.recv() {
                    respond(&cloud, request);
                }
            })
        })
        .collect();
    Ok(MockCloudServer {
        server,
        cloud,
        addr: local,
        workers,
    })
}

fn respond(cloud: &Cloud, mut request: tiny_http::Request) {
    let mut body = Vec::new();
    if let Err(e) = request.as_reader().read_to_end(&mut body) {
        log::warn!("unreadable request body: {e}");
        return;
    }
    let method = request.method().as_str().to_ascii_uppercase();
    let reply = cloud.handle(&method, request.url(), &body);
    log::info!("{method} {} -> {}", request.url(), reply.status);
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = tiny_http::Response::from_string(reply.body_text())
        .with_status_code(reply.status)
        .with_header(header);
    if let Err(e) = request.respond(response) {
        log::warn!("failed to respond: {e}");
    }
}
