//! Blocking HTTP client used by the CLI.

use std::io::{BufRead, BufReader};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::bus::ApiEvent;
use super::server::RemapRequest;
use crate::intent::IntentRequest;
use crate::simnet::ScenarioSpec;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("bad response: {0}")]
    Decode(String),
}

impl ClientError {
    /// 1 for requests the server rejected as the caller's fault, 2 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            ClientError::Http { status, .. } if (400..500).contains(status) => 1,
            _ => 2,
        }
    }
}

pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(addr: &str) -> Client {
        let base = if addr.starts_with("http://") || addr.starts_with("https://") {
            addr.trim_end_matches('/').to_string()
        } else {
            format!("http://{}", addr.trim_end_matches('/'))
        };
        Client { base, http: reqwest::blocking::Client::builder().timeout(None).build().expect("http client") }
    }

    fn finish<T: DeserializeOwned>(r: reqwest::blocking::Response) -> Result<T, ClientError> {
        let status = r.status().as_u16();
        let text = r.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        if status >= 400 {
            return Err(ClientError::Http { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        let r = self.http.get(format!("{}{path}", self.base)).send().map_err(|e| ClientError::Transport(e.to_string()))?;
        Self::finish(r)
    }

    pub fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let r = self
            .http
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Self::finish(r)
    }

    pub fn chain_head(&self) -> Result<Value, ClientError> {
        self.get("/chain/head")
    }

    pub fn block(&self, height: u64) -> Result<Value, ClientError> {
        self.get(&format!("/chain/blocks/{height}"))
    }

    pub fn tx(&self, hash: &str) -> Result<Value, ClientError> {
        self.get(&format!("/chain/tx/{hash}"))
    }

    pub fn registry(&self) -> Result<Value, ClientError> {
        self.get("/registry")
    }

    pub fn submit_intent(&self, req: &IntentRequest) -> Result<Value, ClientError> {
        self.post("/intents", req)
    }

    pub fn report(&self, id: u64) -> Result<Value, ClientError> {
        self.get(&format!("/intents/{id}/report"))
    }

    pub fn topology(&self) -> Result<Value, ClientError> {
        self.get("/topology")
    }

    pub fn mapping(&self) -> Result<Value, ClientError> {
        self.get("/mapping")
    }

    pub fn remap(&self, switch: &str, controller: &str) -> Result<Value, ClientError> {
        self.post("/mapping/remap", &RemapRequest { switch: switch.into(), controller: controller.into() })
    }

    pub fn evict(&self, id: &str) -> Result<Value, ClientError> {
        self.post(&format!("/elements/{id}/evict"), &Value::Null)
    }

    pub fn run_scenario(&self, spec: &ScenarioSpec, seed: Option<u64>) -> Result<Value, ClientError> {
        let path = match seed {
            Some(s) => format!("/scenarios/run?seed={s}"),
            None => "/scenarios/run".into(),
        };
        self.post(&path, spec)
    }

    /// Follows the event stream from `from_seq`, calling `f` per event until
    /// it returns false or the stream ends.
    pub fn events(&self, from_seq: u64, mut f: impl FnMut(ApiEvent) -> bool) -> Result<(), ClientError> {
        let r = self
            .http
            .get(format!("{}/events?from_seq={from_seq}", self.base))
            .send()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = r.status().as_u16();
        if status >= 400 {
            let body = r.text().unwrap_or_default();
            return Err(ClientError::Http { status, body });
        }
        for line in BufReader::new(r).lines() {
            let line = line.map_err(|e| ClientError::Transport(e.to_string()))?;
            let Some(data) = line.strip_prefix("data:") else { continue };
            let ev: ApiEvent = serde_json::from_str(data.trim()).map_err(|e| ClientError::Decode(e.to_string()))?;
            if !f(ev) {
                break;
            }
        }
        Ok(())
    }
}
