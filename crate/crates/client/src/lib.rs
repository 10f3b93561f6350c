//! Thin async client for the session service.

use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

use raschcat_core::api::{AnswerRequest, ApiSession, ErrorBody, PosteriorView, WhatIf};
use raschcat_core::{Response, SessionConfig};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),

    /// The server answered with a non-2xx status and an error body.
    #[error("{status} {code}: {message}")]
    Api {
        status: StatusCode,
        code: String,
        message: String,
    },
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base_url` like `http://127.0.0.1:8080`.
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn call<B: Serialize, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&B>,
    ) -> Result<T> {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(body) = body {
            req = req.json(body);
        }
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        let (code, message) = match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => (body.code, body.message),
            Err(_) => ("unknown".to_string(), text),
        };
        Err(ClientError::Api {
            status,
            code,
            message,
        })
    }

    pub async fn create_session(&self, config: &SessionConfig) -> Result<ApiSession> {
        self.call(Method::POST, "/sessions", Some(config)).await
    }

    pub async fn session(&self, id: &str) -> Result<ApiSession> {
        self.call::<(), _>(Method::GET, &format!("/sessions/{id}"), None)
            .await
    }

    pub async fn answer(&self, id: &str, item_id: &str, response: Response) -> Result<ApiSession> {
        let body = AnswerRequest {
            item_id: item_id.to_string(),
            response,
        };
        self.call(
            Method::POST,
            &format!("/sessions/{id}/responses"),
            Some(&body),
        )
        .await
    }

    pub async fn posterior(&self, id: &str) -> Result<PosteriorView> {
        self.call::<(), _>(Method::GET, &format!("/sessions/{id}/posterior"), None)
            .await
    }

    pub async fn what_if(&self, id: &str) -> Result<WhatIf> {
        self.call::<(), _>(Method::GET, &format!("/sessions/{id}/whatif"), None)
            .await
    }

    pub async fn delete(&self, id: &str) -> Result<()> {
        self.call::<(), serde::de::IgnoredAny>(Method::DELETE, &format!("/sessions/{id}"), None)
            .await
            .map(|_| ())
    }
}
