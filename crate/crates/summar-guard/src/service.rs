//! JSON-over-HTTP access to live sessions.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use summar_guard_core::dsl::TableView;
use summar_guard_core::engine::QuerySpec;
use summar_guard_core::graph::Hierarchy;
use summar_guard_core::model::{read_csv, Category};
use summar_guard_core::property::{PropagationMode, PropertyOverride};
use summar_guard_core::session::{Binding, Session};
use summar_guard_core::Error;
use tokio::sync::Mutex;
use tower_http::cors::CorsLayer;

/// Largest page of rows returned at once.
pub const MAX_ROWS: usize = 1000;

#[derive(Default)]
pub struct Registry {
    sessions: std::sync::Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    next: AtomicU64,
}

type Shared = Arc<Registry>;

pub struct ApiError(StatusCode, Value);

impl ApiError {
    fn bad(msg: impl ToString) -> Self {
        ApiError(StatusCode::BAD_REQUEST, json!({ "error": msg.to_string() }))
    }

    fn not_found(what: impl ToString) -> Self {
        ApiError(StatusCode::NOT_FOUND, json!({ "error": what.to_string() }))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::UnknownNode(_) | Error::UnknownDimension(_) => StatusCode::NOT_FOUND,
            Error::AlreadyExists(_) => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, json!({ "error": e.to_string() }))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn ok(v: Value) -> ApiResult {
    Ok(Json(v).into_response())
}

fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad(format!("malformed request: {e}")))
}

fn session(reg: &Registry, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
    let map = reg.sessions.lock().expect("registry poisoned");
    map.get(id).cloned().ok_or_else(|| ApiError::not_found(format!("unknown session `{id}`")))
}

pub fn router() -> Router {
    router_with(Arc::new(Registry::default()))
}

pub fn router_with(reg: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_summary))
        .route("/sessions/{id}/tables", post(add_table))
        .route("/sessions/{id}/query", post(query))
        .route("/sessions/{id}/nodes/{n}/rows", get(rows))
        .route("/sessions/{id}/nodes/{n}/properties", get(properties))
        .route("/sessions/{id}/nodes/{n}/explain/{attr}", get(explain))
        .route("/sessions/{id}/focus", post(focus))
        .route("/sessions/{id}/views", post(views))
        .route("/sessions/{id}/graphs/{dimension}", get(graph))
        .layer(CorsLayer::permissive())
        .with_state(reg)
}

pub async fn serve(port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    axum::serve(listener, router()).await
}

#[derive(Deserialize)]
struct NewSession {
    #[serde(default)]
    mode: Option<PropagationMode>,
}

async fn create_session(State(reg): State<Shared>, body: Bytes) -> ApiResult {
    let req: NewSession = if body.is_empty() { NewSession { mode: None } } else { parse(&body)? };
    let mode = req.mode.unwrap_or(PropagationMode::Summarizable);
    let id = format!("s{}", reg.next.fetch_add(1, Ordering::SeqCst) + 1);
    reg.sessions.lock().expect("registry poisoned").insert(id.clone(), Arc::new(Mutex::new(Session::new(mode))));
    Ok((StatusCode::CREATED, Json(json!({ "session": id, "mode": mode }))).into_response())
}

fn summary(id: &str, s: &Session) -> Value {
    let nodes: Vec<Value> = s
        .order
        .iter()
        .map(|n| {
            let node = &s.nodes[n];
            json!({
                "id": n,
                "spec": node.spec,
                "inputs": node.inputs,
                "columns": node.result.schema.names(),
                "rows": node.result.len(),
            })
        })
        .collect();
    json!({ "session": id, "mode": s.mode, "focus": s.focus, "nodes": nodes, "views": s.views })
}

async fn session_summary(State(reg): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let s = session(&reg, &id)?;
    let s = s.lock().await;
    ok(summary(&id, &s))
}

#[derive(Deserialize)]
struct MeasureDecl {
    name: String,
    category: Category,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Declaration {
    Dimension {
        name: String,
        hierarchy: Vec<Vec<String>>,
    },
    Fact {
        name: String,
        #[serde(default)]
        dims: Vec<Binding>,
        #[serde(default)]
        measures: Vec<MeasureDecl>,
        #[serde(default)]
        properties: BTreeMap<String, PropertyOverride>,
    },
}

/// Multipart fields `csv` (the data) and `declaration` (JSON).
async fn add_table(State(reg): State<Shared>, Path(id): Path<String>, mut form: Multipart) -> ApiResult {
    let s = session(&reg, &id)?;
    let mut csv = None;
    let mut decl = None;
    while let Some(field) = form.next_field().await.map_err(ApiError::bad)? {
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(ApiError::bad)?;
        match name.as_str() {
            "csv" => csv = Some(data),
            "declaration" => decl = Some(parse::<Declaration>(&data)?),
            other => return Err(ApiError::bad(format!("unexpected field `{other}`"))),
        }
    }
    let csv = csv.ok_or_else(|| ApiError::bad("missing field `csv`"))?;
    let decl = decl.ok_or_else(|| ApiError::bad("missing field `declaration`"))?;
    let raw = read_csv(&csv[..])?;
    let mut s = s.lock().await;
    let name = match decl {
        Declaration::Dimension { name, hierarchy } => {
            s.add_dimension(&name, &raw, &Hierarchy::from_chains(&hierarchy))?;
            name
        }
        Declaration::Fact { name, dims, measures, properties } => {
            let ms: Vec<(String, Category)> = measures.into_iter().map(|m| (m.name, m.category)).collect();
            s.add_fact(&name, &raw, &dims, &ms, &properties)?;
            name
        }
    };
    let t = s.table(&name)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "node": name,
            "kind": t.kind,
            "columns": t.schema.names(),
            "rows": t.len(),
            "properties": t.properties.len(),
        })),
    )
        .into_response())
}

#[derive(Deserialize)]
struct QueryRequest {
    spec: QuerySpec,
    #[serde(default)]
    inputs: Vec<String>,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    force: bool,
}

async fn query(State(reg): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let s = session(&reg, &id)?;
    let req: QueryRequest = parse(&body)?;
    let mut s = s.lock().await;
    let inputs = if req.inputs.is_empty() {
        vec![s.focus.clone().ok_or_else(|| ApiError::bad("no inputs and no focus"))?]
    } else {
        req.inputs
    };
    let applied = s.apply(&req.spec, &inputs, req.name.as_deref(), req.force)?;
    let status = if applied.node.is_some() { StatusCode::OK } else { StatusCode::UNPROCESSABLE_ENTITY };
    Ok((status, Json(json!({ "node": applied.node, "verdict": applied.verdict }))).into_response())
}

#[derive(Deserialize)]
struct Page {
    limit: Option<usize>,
    offset: Option<usize>,
}

async fn rows(State(reg): State<Shared>, Path((id, n)): Path<(String, String)>, Query(p): Query<Page>) -> ApiResult {
    let s = session(&reg, &id)?;
    let s = s.lock().await;
    let limit = p.limit.unwrap_or(100).min(MAX_ROWS);
    let offset = p.offset.unwrap_or(0);
    let view = TableView::of(s.table(&n)?, offset, limit);
    ok(json!({
        "node": s.resolve(&n)?,
        "columns": view.columns,
        "rows": view.rows,
        "total": view.total,
        "offset": offset,
        "limit": limit,
    }))
}

async fn properties(State(reg): State<Shared>, Path((id, n)): Path<(String, String)>) -> ApiResult {
    let s = session(&reg, &id)?;
    let s = s.lock().await;
    let t = s.table(&n)?;
    ok(json!({ "node": s.resolve(&n)?, "properties": t.properties }))
}

async fn explain(State(reg): State<Shared>, Path((id, n, attr)): Path<(String, String, String)>) -> ApiResult {
    let s = session(&reg, &id)?;
    let s = s.lock().await;
    ok(serde_json::to_value(s.explain(&n, &attr)?).map_err(ApiError::bad)?)
}

#[derive(Deserialize)]
struct FocusRequest {
    node: String,
}

async fn focus(State(reg): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let s = session(&reg, &id)?;
    let req: FocusRequest = parse(&body)?;
    let mut s = s.lock().await;
    ok(json!({ "focus": s.backtrack(&req.node)? }))
}

#[derive(Deserialize)]
struct ViewRequest {
    name: String,
    node: String,
}

async fn views(State(reg): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let s = session(&reg, &id)?;
    let req: ViewRequest = parse(&body)?;
    let mut s = s.lock().await;
    s.save_view(&req.name, &req.node)?;
    Ok((StatusCode::CREATED, Json(json!({ "name": req.name, "node": s.resolve(&req.node)? }))).into_response())
}

#[derive(Deserialize)]
struct GraphQuery {
    format: Option<String>,
}

async fn graph(
    State(reg): State<Shared>,
    Path((id, dimension)): Path<(String, String)>,
    Query(q): Query<GraphQuery>,
) -> ApiResult {
    let s = session(&reg, &id)?;
    let s = s.lock().await;
    let g = s.graph(&dimension)?;
    match q.format.as_deref().unwrap_or("json") {
        "json" => ok(serde_json::to_value(&*g).map_err(ApiError::bad)?),
        "dot" => Ok(([(header::CONTENT_TYPE, "text/vnd.graphviz")], g.to_dot()).into_response()),
        other => Err(ApiError::bad(format!("unknown format `{other}`"))),
    }
}
