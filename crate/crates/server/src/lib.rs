//! HTTP/JSON service for the virtual hot-air-blower trainer.
//!
//! Batch operations are plain POST endpoints under `/api`. The live trainer
//! is a WebSocket at `/api/live`: each text frame carries one JSON message,
//! samples flow out at every tick and operator commands flow in.

mod live;

use std::future::Future;
use std::io;

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use habs_core::api::{
    CalibrateRequest, CalibrateResponse, ErrorBody, IdentifyRequest, SimulateResponse, StepRequest,
};
use habs_core::live::{Command, ServerMessage};
use habs_core::{
    fit_cubic, identify_regions, run_closed_loop, run_open_loop_step, PlantConfig, RegionalModel,
    Scenario, StepRecord,
};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc};

pub use live::{spawn_live, LiveConfig, LiveHandle};

/// WebSocket close code for policy violations; sent to lagging subscribers.
const CLOSE_POLICY: u16 = 1008;

#[derive(Debug, Clone)]
pub struct AppState {
    live: LiveHandle,
}

impl AppState {
    pub fn new(live: LiveHandle) -> Self {
        Self { live }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn unprocessable(err: impl ToString) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            message: err.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rej: JsonRejection) -> Self {
        Self {
            status: rej.status(),
            message: rej.body_text(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs CPU-bound work off the async workers.
async fn blocking<T, E, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, E> + Send + 'static,
    T: Send + 'static,
    E: ToString + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(result) => result.map(Json).map_err(ApiError::unprocessable),
        Err(e) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: e.to_string(),
        }),
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn calibrate(
    body: Result<Json<CalibrateRequest>, JsonRejection>,
) -> ApiResult<CalibrateResponse> {
    let Json(req) = body?;
    let poly = fit_cubic(&req.points).map_err(ApiError::unprocessable)?;
    Ok(Json(CalibrateResponse::new(poly, &req.points)))
}

async fn step(body: Result<Json<StepRequest>, JsonRejection>) -> ApiResult<StepRecord> {
    let Json(req) = body?;
    let cfg = PlantConfig::preset(&req.preset).map_err(ApiError::unprocessable)?;
    blocking(move || run_open_loop_step(req.u0, req.u1, req.duration, req.ts, &cfg)).await
}

async fn identify(body: Result<Json<IdentifyRequest>, JsonRejection>) -> ApiResult<RegionalModel> {
    let Json(req) = body?;
    blocking(move || identify_regions(&req.records)).await
}

async fn simulate(body: Result<Json<Scenario>, JsonRejection>) -> ApiResult<SimulateResponse> {
    let Json(scenario) = body?;
    blocking(move || run_closed_loop(&scenario).map(|log| SimulateResponse::from(&log))).await
}

async fn live_ws(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state.live))
}

/// Reply to one inbound text line.
fn handle_line(live: &LiveHandle, line: &str) -> ServerMessage {
    match Command::parse(line).and_then(|cmd| {
        let kind = cmd.kind();
        live.submit(cmd).map(|()| kind)
    }) {
        Ok(kind) => ServerMessage::Ack {
            command: kind.to_string(),
        },
        Err(message) => ServerMessage::Error { message },
    }
}

async fn connection(socket: WebSocket, live: LiveHandle) {
    let (mut sink, mut stream) = socket.split();
    let mut samples = live.subscribe();
    let (reply_tx, mut reply_rx) = mpsc::channel::<String>(32);

    let writer = async move {
        loop {
            let frame = tokio::select! {
                sample = samples.recv() => match sample {
                    Ok(line) => Message::Text(line),
                    Err(broadcast::error::RecvError::Lagged(missed)) => {
                        tracing::warn!(missed, "disconnecting slow subscriber");
                        let _ = sink
                            .send(Message::Close(Some(CloseFrame {
                                code: CLOSE_POLICY,
                                reason: "subscriber too slow".into(),
                            })))
                            .await;
                        break;
                    }
                    Err(broadcast::error::RecvError::Closed) => break,
                },
                reply = reply_rx.recv() => match reply {
                    Some(line) => Message::Text(line.into()),
                    None => break,
                },
            };
            if sink.send(frame).await.is_err() {
                break;
            }
        }
    };

    let reader = async move {
        while let Some(Ok(msg)) = stream.next().await {
            match msg {
                Message::Text(text) => {
                    for line in text.as_str().lines().filter(|l| !l.trim().is_empty()) {
                        let reply = handle_line(&live, line).to_line();
                        if reply_tx.send(reply).await.is_err() {
                            return;
                        }
                    }
                }
                Message::Close(_) => return,
                _ => {}
            }
        }
    };

    tokio::select! {
        _ = writer => {}
        _ = reader => {}
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/api/calibrate", post(calibrate))
        .route("/api/step", post(step))
        .route("/api/identify", post(identify))
        .route("/api/simulate", post(simulate))
        .route("/api/live", get(live_ws))
        .with_state(state)
}

/// Starts the live loop and serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    cfg: LiveConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> io::Result<()> {
    let (live, task) =
        spawn_live(cfg).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "serving");
    }
    let result = axum::serve(listener, router(AppState::new(live)))
        .with_graceful_shutdown(shutdown)
        .await;
    task.abort();
    result
}
