//! Blocking REST client used by the admin command line.

use banditry_core::experiment::{InteractionRecord, MAX_PAGE};
use banditry_core::policy::PolicyConfig;
use banditry_core::theta::ThetaRecord;
use serde_json::{json, Value};
use ureq::Agent;

use crate::api::ADMIN_HEADER;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] ureq::Error),
    #[error("server replied {status}: {code}: {message}")]
    Api {
        status: u16,
        code: String,
        message: String,
    },
    #[error("unexpected response: {0}")]
    Decode(String),
}

pub struct Client {
    base: String,
    admin_token: String,
    agent: Agent,
}

impl Client {
    pub fn new(base: &str, admin_token: &str) -> Self {
        let agent = Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            base: base.trim_end_matches('/').to_string(),
            admin_token: admin_token.to_string(),
            agent,
        }
    }

    fn finish(mut response: ureq::http::Response<ureq::Body>) -> Result<Value, ClientError> {
        let status = response.status().as_u16();
        let body: Value = response
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_json()
            .map_err(|e| ClientError::Decode(e.to_string()))?;
        if (200..300).contains(&status) {
            return Ok(body);
        }
        let text = |f: &str| {
            body.get(f)
                .and_then(Value::as_str)
                .unwrap_or("")
                .to_string()
        };
        Err(ClientError::Api {
            status,
            code: text("error"),
            message: text("message"),
        })
    }

    fn get(&self, path: &str, query: &[(&str, String)]) -> Result<Value, ClientError> {
        let mut request = self
            .agent
            .get(format!("{}{path}", self.base))
            .header(ADMIN_HEADER, &self.admin_token);
        for (k, v) in query {
            request = request.query(*k, v);
        }
        Self::finish(request.call()?)
    }

    pub fn create(&self, name: &str, config: &PolicyConfig) -> Result<Value, ClientError> {
        let response = self
            .agent
            .post(format!("{}/management/exp", self.base))
            .header(ADMIN_HEADER, &self.admin_token)
            .send_json(json!({"name": name, "config": config}))?;
        Self::finish(response)
    }

    pub fn update(&self, id: u64, config: &PolicyConfig) -> Result<Value, ClientError> {
        let response = self
            .agent
            .put(format!("{}/management/exp/{id}", self.base))
            .header(ADMIN_HEADER, &self.admin_token)
            .send_json(json!({ "config": config }))?;
        Self::finish(response)
    }

    pub fn list(&self) -> Result<Vec<Value>, ClientError> {
        let body = self.get("/management/exp", &[])?;
        body.get("experiments")
            .and_then(Value::as_array)
            .cloned()
            .ok_or_else(|| ClientError::Decode("missing `experiments`".into()))
    }

    pub fn delete(&self, id: u64) -> Result<(), ClientError> {
        let response = self
            .agent
            .delete(format!("{}/management/exp/{id}", self.base))
            .header(ADMIN_HEADER, &self.admin_token)
            .call()?;
        Self::finish(response).map(|_| ())
    }

    pub fn theta(
        &self,
        id: u64,
        name: Option<&str>,
        key: Option<&str>,
        value: Option<&str>,
    ) -> Result<Vec<ThetaRecord>, ClientError> {
        let mut query = Vec::new();
        for (param, v) in [("name", name), ("key_field", key), ("value", value)] {
            if let Some(v) = v {
                query.push((param, v.to_string()));
            }
        }
        let body = self.get(&format!("/{id}/theta.json"), &query)?;
        serde_json::from_value(body["theta"].clone())
            .map_err(|e| ClientError::Decode(e.to_string()))
    }

    /// One page of the log, newest first, plus the total length.
    pub fn log_page(
        &self,
        id: u64,
        limit: usize,
        offset: usize,
    ) -> Result<(Vec<InteractionRecord>, u64), ClientError> {
        let body = self.get(
            &format!("/{id}/log.json"),
            &[("limit", limit.to_string()), ("offset", offset.to_string())],
        )?;
        let records = serde_json::from_value(body["records"].clone())
            .map_err(|e| ClientError::Decode(e.to_string()))?;
        let total = body["total"].as_u64().unwrap_or(0);
        Ok((records, total))
    }

    /// The whole log in sequence order. Records appended while paging are
    /// left out, so the result is a consistent prefix.
    pub fn export_log(&self, id: u64) -> Result<Vec<InteractionRecord>, ClientError> {
        let (first, total) = self.log_page(id, MAX_PAGE, 0)?;
        let mut records: std::collections::BTreeMap<u64, InteractionRecord> = first
            .into_iter()
            .filter(|r| r.t <= total)
            .map(|r| (r.t, r))
            .collect();
        let mut known = total;
        let mut lowest = records.keys().next().copied().unwrap_or(total + 1);
        while lowest > 1 {
            // record t sits at offset `len - t` in the newest-first order
            let offset = (known + 1 - lowest) as usize;
            let (page, now) = self.log_page(id, MAX_PAGE, offset)?;
            known = now;
            records.extend(page.into_iter().filter(|r| r.t <= total).map(|r| (r.t, r)));
            match records.keys().next().copied() {
                Some(t) if t < lowest => lowest = t,
                _ => break,
            }
        }
        if records.len() as u64 != total || records.keys().next().is_some_and(|t| *t != 1) {
            return Err(ClientError::Decode(
                "log changed shape while exporting".into(),
            ));
        }
        Ok(records.into_values().collect())
    }
}
