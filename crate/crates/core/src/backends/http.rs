use std::time::Duration;

use super::{BackendRole, Endpoint, Transport, TransportError};

/// JSON-over-HTTP transport: `POST {base_url}/v1/{endpoint}`.
pub struct HttpTransport {
    agent: ureq::Agent,
    bearer_token: Option<String>,
}

impl HttpTransport {
    pub fn new(bearer_token: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
            bearer_token,
        }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(None)
    }
}

impl Transport for HttpTransport {
    fn post(&self, endpoint: &Endpoint, role: BackendRole, body: &[u8]) -> Result<Vec<u8>, TransportError> {
        let url = format!("{}/v1/{}", endpoint.base_url.trim_end_matches('/'), role.endpoint());
        let mut request = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .config()
            .timeout_global(Some(Duration::from_secs_f64(endpoint.timeout_s.max(0.001))))
            .build();
        if let Some(token) = &self.bearer_token {
            request = request.header("authorization", format!("Bearer {token}"));
        }
        let mut response = request
            .send(body)
            .map_err(|e| TransportError::Io(e.to_string()))?;
        let status = response.status().as_u16();
        let bytes = response
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| TransportError::Io(e.to_string()))?;
        if (200..300).contains(&status) {
            Ok(bytes)
        } else {
            Err(TransportError::Status {
                status,
                body: String::from_utf8_lossy(&bytes).into_owned(),
            })
        }
    }
}
