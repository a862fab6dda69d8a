//! Client for the trainer service: batch operations over HTTP/JSON and the
//! live stream over a WebSocket.

use futures_util::{SinkExt, StreamExt};
use habs_core::api::{
    CalibrateRequest, CalibrateResponse, ErrorBody, IdentifyRequest, SimulateResponse, StepRequest,
};
use habs_core::live::{Command, ServerMessage};
use habs_core::{CalibrationPoint, RegionalModel, Scenario, StepRecord};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};
use url::Url;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid server url: {0}")]
    Url(#[from] url::ParseError),
    #[error("server url must use http, got `{0}`")]
    Scheme(String),
    #[error(transparent)]
    Http(#[from] reqwest::Error),
    #[error("server returned {status}: {message}")]
    Api { status: u16, message: String },
    #[error(transparent)]
    WebSocket(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("undecodable server message: {0}")]
    Decode(#[from] serde_json::Error),
}

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: Url,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8326`.
    pub fn new(base: &str) -> Result<Self, ClientError> {
        let base = Url::parse(base)?;
        if base.scheme() != "http" {
            return Err(ClientError::Scheme(base.scheme().to_string()));
        }
        Ok(Self {
            http: reqwest::Client::new(),
            base,
        })
    }

    pub fn base(&self) -> &Url {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await?;
        let message = serde_json::from_str::<ErrorBody>(&text)
            .map(|b| b.error)
            .unwrap_or(text);
        Err(ClientError::Api {
            status: status.as_u16(),
            message,
        })
    }

    async fn post<B: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<T, ClientError> {
        let resp = self
            .http
            .post(self.base.join(path)?)
            .json(body)
            .send()
            .await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<serde_json::Value, ClientError> {
        let resp = self.http.get(self.base.join("health")?).send().await?;
        Self::decode(resp).await
    }

    pub async fn calibrate(
        &self,
        points: Vec<CalibrationPoint>,
    ) -> Result<CalibrateResponse, ClientError> {
        self.post("api/calibrate", &CalibrateRequest { points })
            .await
    }

    pub async fn step(&self, req: &StepRequest) -> Result<StepRecord, ClientError> {
        self.post("api/step", req).await
    }

    pub async fn identify(&self, records: Vec<StepRecord>) -> Result<RegionalModel, ClientError> {
        self.post("api/identify", &IdentifyRequest { records })
            .await
    }

    pub async fn simulate(&self, scenario: &Scenario) -> Result<SimulateResponse, ClientError> {
        self.post("api/simulate", scenario).await
    }

    pub async fn live(&self) -> Result<LiveConnection, ClientError> {
        let mut url = self.base.join("api/live")?;
        url.set_scheme("ws")
            .expect("http and ws are interchangeable");
        let (ws, _) = tokio_tungstenite::connect_async(url.as_str()).await?;
        Ok(LiveConnection { ws })
    }
}

/// Open live stream.
pub struct LiveConnection {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
}

impl LiveConnection {
    pub async fn send(&mut self, cmd: &Command) -> Result<(), ClientError> {
        self.send_raw(&serde_json::to_string(cmd)?).await
    }

    /// Sends a text frame as is; lets callers exercise malformed input.
    pub async fn send_raw(&mut self, text: &str) -> Result<(), ClientError> {
        self.ws.send(Message::text(text)).await?;
        Ok(())
    }

    /// Next server message, or `None` once the server closes the stream.
    pub async fn next_message(&mut self) -> Option<Result<ServerMessage, ClientError>> {
        loop {
            match self.ws.next().await? {
                Ok(Message::Text(text)) => {
                    return Some(ServerMessage::parse(text.as_str()).map_err(ClientError::from))
                }
                Ok(Message::Close(_)) => return None,
                Ok(_) => continue,
                Err(e) => return Some(Err(e.into())),
            }
        }
    }

    pub async fn close(mut self) -> Result<(), ClientError> {
        self.ws.close(None).await?;
        Ok(())
    }
}
