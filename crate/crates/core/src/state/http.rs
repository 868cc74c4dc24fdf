use std::sync::Mutex;
use std::time::Duration;

use super::server::LOCK_TOKEN_HEADER;
use super::{Backend, LockInfo, StateError, StateSnapshot};

/// Client for a remote state server (see [`super::server`]).
pub struct HttpBackend {
    base: String,
    agent: ureq::Agent,
    guard: Mutex<()>,
}

impl HttpBackend {
    /// `base_url` is the server root, e.g. `http://127.0.0.1:8791`.
    pub fn new(base_url: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            // tiny_http parks a worker on every idle keep-alive connection
            .max_idle_connections_per_host(0)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        HttpBackend {
            base: base_url.into().trim_end_matches('/').to_string(),
            agent,
            guard: Mutex::new(()),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }
}

fn transport(e: ureq::Error) -> StateError {
    StateError::Remote(e.to_string())
}

fn read_body(resp: &mut ureq::http::Response<ureq::Body>) -> Result<String, StateError> {
    resp.body_mut().read_to_string().map_err(transport)
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| v["error"].as_str().map(str::to_string))
        .unwrap_or_else(|| body.trim().to_string())
}

impl Backend for HttpBackend {
    fn read_state(&self) -> Result<StateSnapshot, StateError> {
        let _g = self.guard.lock().unwrap_or_else(|e| e.into_inner());
        let mut resp = self.agent.get(&self.url("/state")).call().map_err(transport)?;
        let status = resp.status().as_u16();
        let body = read_body(&mut resp)?;
        match status {
            200 => StateSnapshot::from_json_str(&body),
            404 => Ok(StateSnapshot::empty()),
            s => Err(StateError::Remote(format!("GET /state: {s} {}", error_message(&body)))),
        }
    }

    fn write_state(
        &self,
        snapshot: &StateSnapshot,
        expected_serial: u64,
        token: &str,
    ) -> Result<u64, StateError> {
        let _g = self.guard.lock().unwrap_or_else(|e| e.into_inner());
        let doc = snapshot.to_json_string()?;
        let mut resp = self
            .agent
            .put(&self.url(&format!("/state?expected_serial={expected_serial}")))
            .header(LOCK_TOKEN_HEADER, token)
            .header("Content-Type", "application/json")
            .send(doc)
            .map_err(transport)?;
        let status = resp.status().as_u16();
        let body = read_body(&mut resp)?;
        match status {
            200 => {
                let v: serde_json::Value = serde_json::from_str(&body)
                    .map_err(|e| StateError::Remote(format!("bad PUT response: {e}")))?;
                v["serial"]
                    .as_u64()
                    .ok_or_else(|| StateError::Remote("PUT response lacks serial".into()))
            }
            409 => {
                let stored = serde_json::from_str::<serde_json::Value>(&body)
                    .ok()
                    .and_then(|v| v["stored_serial"].as_u64());
                match stored {
                    Some(stored) => Err(StateError::SerialConflict {
                        expected: expected_serial,
                        stored,
                    }),
                    None => Err(StateError::Remote(error_message(&body))),
                }
            }
            423 => Err(StateError::LockNotHeld),
            s => Err(StateError::Remote(format!("PUT /state: {s} {}", error_message(&body)))),
        }
    }

    fn lock(&self, info: &LockInfo) -> Result<String, StateError> {
        let _g = self.guard.lock().unwrap_or_else(|e| e.into_inner());
        let mut resp = self
            .agent
            .post(&self.url("/state/lock"))
            .header("Content-Type", "application/json")
            .send(serde_json::to_string(info).expect("lock info serializes"))
            .map_err(transport)?;
        let status = resp.status().as_u16();
        let body = read_body(&mut resp)?;
        match status {
            200 => Ok(body.trim().to_string()),
            423 => match serde_json::from_str::<LockInfo>(&body) {
                Ok(holder) => Err(StateError::AlreadyLocked(Box::new(holder))),
                Err(_) => Err(StateError::Remote(format!("locked: {}", error_message(&body)))),
            },
            s => Err(StateError::Remote(format!("POST /state/lock: {s} {}", error_message(&body)))),
        }
    }

    fn unlock(&self, token: &str) -> Result<(), StateError> {
        let _g = self.guard.lock().unwrap_or_else(|e| e.into_inner());
        let mut resp = self
            .agent
            .delete(&self.url("/state/lock"))
            .header(LOCK_TOKEN_HEADER, token)
            .call()
            .map_err(transport)?;
        let status = resp.status().as_u16();
        let body = read_body(&mut resp)?;
        match status {
            200 => Ok(()),
            403 => Err(StateError::WrongToken),
            409 => Err(StateError::NotLocked),
            s => Err(StateError::Remote(format!("DELETE /state/lock: {s} {}", error_message(&body)))),
        }
    }

    fn describe(&self) -> String {
        self.base.clone()
    }
}
