//! HTTP model server and client, separating the audited party from the
//! auditor.
//!
//! `POST /query {"x": id | [f64...]}` answers `{"label": 1 | -1}`;
//! `GET /meta` answers `{"kind": "finite" | "linear", "m": .., "d": ..}`.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use crate::domain::{Hypothesis, Label};
use crate::error::{AuditError, Result};
use crate::gaussian::{LinearModel, SignOracle};
use crate::oracle::LabelOracle;

#[derive(Clone, Debug)]
pub enum ServedModel {
    Finite(Hypothesis),
    Linear(LinearModel),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryPoint {
    Id(usize),
    Vector(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
struct QueryRequest {
    x: QueryPoint,
}

#[derive(Serialize, Deserialize)]
struct QueryResponse {
    label: Label,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
}

impl ServedModel {
    fn meta(&self) -> Meta {
        match self {
            Self::Finite(h) => Meta { kind: "finite".into(), m: Some(h.len()), d: None },
            Self::Linear(l) => Meta { kind: "linear".into(), m: None, d: Some(l.dim()) },
        }
    }

    fn answer(&self, x: &QueryPoint) -> std::result::Result<Label, String> {
        match (self, x) {
            (Self::Finite(h), QueryPoint::Id(i)) if *i < h.len() => Ok(h.label(*i)),
            (Self::Finite(h), QueryPoint::Id(i)) => Err(format!("example {i} out of range 0..{}", h.len())),
            (Self::Linear(l), QueryPoint::Vector(v)) if v.len() == l.dim() => Ok(l.predict(v)),
            (Self::Linear(l), QueryPoint::Vector(v)) => Err(format!("expected {} coordinates, got {}", l.dim(), v.len())),
            (Self::Finite(_), QueryPoint::Vector(_)) => Err("finite model expects an example id".into()),
            (Self::Linear(_), QueryPoint::Id(_)) => Err("linear model expects a vector".into()),
        }
    }
}

async fn query_handler(
    State(model): State<Arc<ServedModel>>,
    Json(req): Json<QueryRequest>,
) -> std::result::Result<Json<QueryResponse>, (StatusCode, String)> {
    model.answer(&req.x).map(|label| Json(QueryResponse { label })).map_err(|e| (StatusCode::BAD_REQUEST, e))
}

async fn meta_handler(State(model): State<Arc<ServedModel>>) -> Json<Meta> {
    Json(model.meta())
}

pub fn router(model: ServedModel) -> Router {
    Router::new()
        .route("/query", post(query_handler))
        .route("/meta", get(meta_handler))
        .with_state(Arc::new(model))
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?)
}

/// Serves until the process is stopped.
pub fn serve_blocking(model: ServedModel, listener: std::net::TcpListener) -> Result<()> {
    listener.set_nonblocking(true)?;
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        axum::serve(listener, router(model)).await
    })?;
    Ok(())
}

/// A server on a background thread, stopped when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn spawn_server(model: ServedModel, addr: &str) -> Result<ServerHandle> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let rt = runtime()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let served = rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            axum::serve(listener, router(model))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        });
        if let Err(e) = served {
            log::error!("model server stopped: {e}");
        }
    });
    Ok(ServerHandle { addr: local, shutdown: Some(tx), thread: Some(thread) })
}

/// Oracle backed by a model server. Transport failures are retried with
/// exponential backoff and are fatal once retries run out.
pub struct RemoteOracle {
    base: String,
    agent: ureq::Agent,
    retries: u32,
    backoff: Duration,
    meta: Meta,
}

pub const DEFAULT_RETRIES: u32 = 3;

impl RemoteOracle {
    pub fn connect(url: &str) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(10)))
            .build()
            .into();
        let mut o = Self {
            base: url.trim_end_matches('/').to_string(),
            agent,
            retries: DEFAULT_RETRIES,
            backoff: Duration::from_millis(100),
            meta: Meta { kind: String::new(), m: None, d: None },
        };
        o.meta = o.with_retries(|o| o.agent.get(format!("{}/meta", o.base)).call()?.body_mut().read_json())?;
        Ok(o)
    }

    pub fn meta(&self) -> &Meta {
        &self.meta
    }

    fn with_retries<T>(&self, f: impl Fn(&Self) -> std::result::Result<T, ureq::Error>) -> Result<T> {
        let mut wait = self.backoff;
        let mut attempt = 0;
        loop {
            match f(self) {
                Ok(v) => return Ok(v),
                Err(ureq::Error::StatusCode(code)) if (400..500).contains(&code) => {
                    return Err(AuditError::InvalidInput(format!("server rejected request with status {code}")));
                }
                Err(e) if attempt < self.retries => {
                    log::warn!("request to {} failed ({e}); retrying in {wait:?}", self.base);
                    std::thread::sleep(wait);
                    wait *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(AuditError::Transport(format!("{}: {e}", self.base))),
            }
        }
    }

    fn ask(&self, x: QueryPoint) -> Result<Label> {
        let req = QueryRequest { x };
        let resp: QueryResponse = self.with_retries(|o| {
            o.agent.post(format!("{}/query", o.base)).send_json(&req)?.body_mut().read_json()
        })?;
        Ok(resp.label)
    }
}

impl LabelOracle for RemoteOracle {
    fn query(&mut self, x: usize) -> Result<Label> {
        self.ask(QueryPoint::Id(x))
    }
}

impl SignOracle for RemoteOracle {
    fn dim(&self) -> usize {
        self.meta.d.unwrap_or(0)
    }

    fn query_point(&mut self, x: &[f64]) -> Result<Label> {
        self.ask(QueryPoint::Vector(x.to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_round_trip() {
        let h = Hypothesis::from_signs(&[1, -1, 1]).unwrap();
        let server = spawn_server(ServedModel::Finite(h.clone()), "127.0.0.1:0").unwrap();
        let mut o = RemoteOracle::connect(&server.url()).unwrap();
        assert_eq!(o.meta(), &Meta { kind: "finite".into(), m: Some(3), d: None });
        for x in 0..3 {
            assert_eq!(o.query(x).unwrap(), h.label(x));
        }
        assert!(matches!(o.query(7), Err(AuditError::InvalidInput(_))));
    }

    #[test]
    fn linear_round_trip() {
        let m = LinearModel::new(vec![1.0, -2.0], 0.5).unwrap();
        let server = spawn_server(ServedModel::Linear(m.clone()), "127.0.0.1:0").unwrap();
        let mut o = RemoteOracle::connect(&server.url()).unwrap();
        assert_eq!(o.dim(), 2);
        assert_eq!(o.query_point(&[0.0, 1.0]).unwrap(), Label::Neg);
        assert_eq!(o.query_point(&[0.0, 0.0]).unwrap(), Label::Pos);
    }

    #[test]
    fn unreachable_server_is_a_transport_error() {
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let r = RemoteOracle::connect(&format!("http://127.0.0.1:{port}"));
        assert!(matches!(r, Err(AuditError::Transport(_))));
    }
}
