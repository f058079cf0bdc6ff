//! HTTP and web-socket front end. Each project gets one executor thread
//! that owns its [`ProjectHub`]; sessions talk to it over a channel.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use board_core::i18n::{Catalog, REFERENCE_LOCALE};
use board_core::{ClientId, Operation, Project, ProjectId};
use board_store::Store;
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};

use crate::hub::{new_project_token, Delivery, ProjectHub};
use crate::protocol::{decode, ClientMsg, ErrorCode, Rejection, ServerMsg};

const SHELL: &str = include_str!("../assets/shell.html");

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub data_dir: PathBuf,
    pub locale_dir: Option<PathBuf>,
    pub compact_threshold: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error("data dir: {0}")]
    Store(#[from] board_store::StoreError),
    #[error("locale catalogs: {0}")]
    Catalog(#[from] board_core::i18n::CatalogError),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone)]
struct Conn {
    id: u64,
    tx: mpsc::UnboundedSender<String>,
}

enum Command {
    Hello {
        client: ClientId,
        last_seq: u64,
        locale: String,
        conn: Conn,
        joined: oneshot::Sender<bool>,
    },
    Op {
        client: ClientId,
        op: Operation,
    },
    Resync {
        client: ClientId,
        from_seq: u64,
    },
    Leave {
        client: ClientId,
        conn_id: u64,
    },
}

type Executor = mpsc::UnboundedSender<Command>;

pub struct AppState {
    store: Store,
    catalog: Catalog,
    executors: Mutex<HashMap<ProjectId, Executor>>,
    next_conn: AtomicU64,
}

impl AppState {
    pub fn new(config: &ServerConfig) -> Result<Arc<Self>, StartError> {
        let store = Store::open(&config.data_dir)?.with_compact_threshold(config.compact_threshold);
        let catalog = match &config.locale_dir {
            Some(dir) => Catalog::load_dir(dir)?,
            None => Catalog::builtin(),
        };
        Ok(Arc::new(Self {
            store,
            catalog,
            executors: Mutex::new(HashMap::new()),
            next_conn: AtomicU64::new(1),
        }))
    }

    fn executor(self: &Arc<Self>, id: &ProjectId) -> Result<Executor, Rejection> {
        let mut executors = self.executors.lock().expect("executor map poisoned");
        if let Some(tx) = executors.get(id) {
            return Ok(tx.clone());
        }
        if !self.store.exists(id) {
            return Err(Rejection::new(ErrorCode::NoSuchProject, id.to_string()));
        }
        let hub = ProjectHub::open(&self.store, id).map_err(|e| Rejection::new(ErrorCode::StorageError, e.to_string()))?;
        let (tx, rx) = mpsc::unbounded_channel();
        let state = Arc::clone(self);
        std::thread::Builder::new()
            .name(format!("project-{id}"))
            .spawn(move || run_executor(hub, rx, state))
            .expect("spawn project executor");
        executors.insert(id.clone(), tx.clone());
        Ok(tx)
    }

    fn error_frame(&self, rejection: &Rejection, locale: &str) -> String {
        let key = rejection.code.label_key();
        let text = self.catalog.localize(&key, locale);
        let detail = if rejection.detail.is_empty() {
            text.into_owned()
        } else {
            format!("{text}: {}", rejection.detail)
        };
        ServerMsg::Error {
            code: rejection.code,
            detail,
        }
        .encode()
    }
}

fn run_executor(mut hub: ProjectHub, mut rx: mpsc::UnboundedReceiver<Command>, state: Arc<AppState>) {
    let mut conns: HashMap<ClientId, Conn> = HashMap::new();
    let deliver = |conns: &HashMap<ClientId, Conn>, out: Vec<Delivery>| {
        for d in out {
            let text = d.msg.encode();
            for to in &d.to {
                if let Some(conn) = conns.get(to) {
                    let _ = conn.tx.send(text.clone());
                }
            }
        }
    };
    while let Some(cmd) = rx.blocking_recv() {
        match cmd {
            Command::Hello {
                client,
                last_seq,
                locale,
                conn,
                joined,
            } => match hub.hello(client.clone(), last_seq, locale.clone()) {
                Ok(out) => {
                    conns.insert(client, conn);
                    let _ = joined.send(true);
                    deliver(&conns, out);
                }
                Err(rej) => {
                    let _ = conn.tx.send(state.error_frame(&rej, &locale));
                    let _ = joined.send(false);
                }
            },
            Command::Op { client, op } => {
                let result = hub.op(&client, op);
                reply(&hub, &conns, &state, &client, result, &deliver);
            }
            Command::Resync { client, from_seq } => {
                let result = hub.resync(&client, from_seq);
                reply(&hub, &conns, &state, &client, result, &deliver);
            }
            Command::Leave { client, conn_id } => {
                if conns.get(&client).is_some_and(|c| c.id == conn_id) {
                    conns.remove(&client);
                    let out = hub.leave(&client);
                    deliver(&conns, out);
                }
            }
        }
    }
}

fn reply(
    hub: &ProjectHub,
    conns: &HashMap<ClientId, Conn>,
    state: &AppState,
    client: &ClientId,
    result: Result<Vec<Delivery>, Rejection>,
    deliver: &impl Fn(&HashMap<ClientId, Conn>, Vec<Delivery>),
) {
    match result {
        Ok(out) => deliver(conns, out),
        Err(rej) => {
            if let Some(conn) = conns.get(client) {
                let locale = hub.locale_of(client).unwrap_or(REFERENCE_LOCALE);
                let _ = conn.tx.send(state.error_frame(&rej, locale));
            }
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/p/{token}", get(shell))
        .route("/ws", get(ws_upgrade))
        .route("/api/projects", post(create_project))
        .route("/api/projects/{id}/export", get(export))
        .route("/locales/{tag}", get(locale_catalog))
        .with_state(state)
}

async fn shell(State(state): State<Arc<AppState>>, Path(token): Path<String>) -> Response {
    if state.store.exists(&ProjectId::new(token)) {
        Html(SHELL).into_response()
    } else {
        (StatusCode::NOT_FOUND, "no such project").into_response()
    }
}

#[derive(Deserialize)]
struct CreateRequest {
    title: String,
    #[serde(default)]
    locale: Option<String>,
}

#[derive(Serialize)]
struct Created {
    project: String,
    url: String,
}

async fn create_project(State(state): State<Arc<AppState>>, Json(req): Json<CreateRequest>) -> Response {
    let locale = req.locale.unwrap_or_else(|| REFERENCE_LOCALE.to_owned());
    let result = tokio::task::spawn_blocking(move || loop {
        let id = new_project_token(&mut rand::thread_rng());
        if state.store.exists(&id) {
            continue;
        }
        break state.store.create(&Project::new(id.clone(), req.title, locale)).map(|_| id);
    })
    .await
    .expect("create task");
    match result {
        Ok(id) => (
            StatusCode::CREATED,
            Json(Created {
                url: format!("/p/{id}"),
                project: id.to_string(),
            }),
        )
            .into_response(),
        Err(e) => {
            tracing::error!(error = %e, "project creation failed");
            (StatusCode::INTERNAL_SERVER_ERROR, "storage_error").into_response()
        }
    }
}

async fn export(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let id = ProjectId::new(id);
    if !state.store.exists(&id) {
        return (StatusCode::NOT_FOUND, "no such project").into_response();
    }
    match state.store.export(&id) {
        Ok(json) => ([("content-type", "application/json")], json).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn locale_catalog(State(state): State<Arc<AppState>>, Path(tag): Path<String>) -> Response {
    let tag = tag.strip_suffix(".json").unwrap_or(&tag);
    Json(state.catalog.resolved(tag)).into_response()
}

async fn ws_upgrade(State(state): State<Arc<AppState>>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| session(socket, state))
}

async fn session(socket: WebSocket, state: Arc<AppState>) {
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<String>();
    tokio::spawn(async move {
        while let Some(text) = rx.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    let conn = Conn {
        id: state.next_conn.fetch_add(1, Ordering::Relaxed),
        tx,
    };
    let mut joined: Option<(Executor, ClientId)> = None;
    let mut locale = REFERENCE_LOCALE.to_owned();

    while let Some(Ok(frame)) = stream.next().await {
        let text = match frame {
            Message::Text(text) => text,
            Message::Close(_) => break,
            Message::Binary(_) => {
                let rej = Rejection::new(ErrorCode::BadMessage, "binary frames are not supported");
                let _ = conn.tx.send(state.error_frame(&rej, &locale));
                continue;
            }
            _ => continue,
        };
        let msg = match decode(text.as_str()) {
            Ok(msg) => msg,
            Err(rej) => {
                let _ = conn.tx.send(state.error_frame(&rej, &locale));
                continue;
            }
        };
        let rejection = match (msg, &joined) {
            (
                ClientMsg::Hello {
                    project,
                    client,
                    last_seq,
                    locale: requested,
                },
                None,
            ) => {
                locale = requested;
                match state.executor(&ProjectId::new(project)) {
                    Ok(exec) => {
                        let (done, joined_rx) = oneshot::channel();
                        let client = ClientId::new(client);
                        let _ = exec.send(Command::Hello {
                            client: client.clone(),
                            last_seq,
                            locale: locale.clone(),
                            conn: conn.clone(),
                            joined: done,
                        });
                        if joined_rx.await.unwrap_or(false) {
                            joined = Some((exec, client));
                        }
                        None
                    }
                    Err(rej) => Some(rej),
                }
            }
            (ClientMsg::Hello { .. }, Some(_)) => Some(Rejection::new(ErrorCode::BadMessage, "already joined")),
            (ClientMsg::Op { op }, Some((exec, client))) => {
                let _ = exec.send(Command::Op {
                    client: client.clone(),
                    op,
                });
                None
            }
            (ClientMsg::Resync { from_seq }, Some((exec, client))) => {
                let _ = exec.send(Command::Resync {
                    client: client.clone(),
                    from_seq,
                });
                None
            }
            (_, None) => Some(Rejection::new(ErrorCode::NotJoined, "send hello first")),
        };
        if let Some(rej) = rejection {
            let _ = conn.tx.send(state.error_frame(&rej, &locale));
        }
    }
    if let Some((exec, client)) = joined {
        let _ = exec.send(Command::Leave { client, conn_id: conn.id });
    }
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, StartError> {
    TcpListener::bind(addr).await.map_err(|source| StartError::Bind { addr, source })
}

/// Serves until `shutdown` resolves. Appends are synced as they happen,
/// so there is nothing left to flush afterwards.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
