//! Blocking HTTP transport for the prompt simplification client.

use peo_core::harness::CompletionClient;
use peo_core::{PeoError, Result};
use serde_json::Value;

pub struct HttpCompletionClient {
    endpoint: String,
    api_key: Option<String>,
}

impl HttpCompletionClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
        }
    }
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, request: &Value) -> Result<Value> {
        let mut req = ureq::post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(request).map_err(|e| {
            PeoError::InvalidInput(format!(
                "completion request to {} failed: {e}",
                self.endpoint
            ))
        })?;
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| PeoError::InvalidInput(format!("completion response is not JSON: {e}")))
    }
}
