//! Routes of the decision protocol and the management API.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, RawQuery, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use banditry_core::document::Document;
use banditry_core::policy::PolicyConfig;
use banditry_core::service::{Access, DecisionService, Param, ThetaFilter};
use serde::Deserialize;
use serde_json::{json, Map, Value};
use subtle::ConstantTimeEq;
use tower_http::cors::CorsLayer;

use crate::error::ApiError;

/// Longest request target accepted; bigger payloads must be POSTed.
pub const MAX_URI_BYTES: usize = 16 * 1024;
pub const ADMIN_HEADER: &str = "x-admin-token";
const DEFAULT_LOG_LIMIT: usize = 100;

pub struct AppState {
    pub service: DecisionService,
    admin_token: String,
}

impl AppState {
    pub fn new(service: DecisionService, admin_token: impl Into<String>) -> Self {
        Self {
            service,
            admin_token: admin_token.into(),
        }
    }

    /// `Some(true)` for a valid admin header, `Some(false)` for a wrong one.
    fn admin(&self, headers: &HeaderMap) -> Option<bool> {
        let presented = headers.get(ADMIN_HEADER)?;
        let ok = !self.admin_token.is_empty()
            && bool::from(presented.as_bytes().ct_eq(self.admin_token.as_bytes()));
        Some(ok)
    }

    fn require_admin(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        match self.admin(headers) {
            Some(true) => Ok(()),
            _ => Err(ApiError::admin_token()),
        }
    }
}

type Shared = Arc<AppState>;

pub fn json_response(status: StatusCode, body: &Value) -> Response {
    let bytes = serde_json::to_vec(body).expect("documents serialize");
    let mut response = (status, bytes).into_response();
    response.headers_mut().insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static("application/json; charset=utf-8"),
    );
    response
}

fn ok(body: Value) -> Response {
    json_response(StatusCode::OK, &body)
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/{exp_id}/getaction.json", get(get_action).post(get_action))
        .route("/{exp_id}/getAction.json", get(get_action).post(get_action))
        .route("/{exp_id}/setreward.json", get(set_reward).post(set_reward))
        .route("/{exp_id}/setReward.json", get(set_reward).post(set_reward))
        .route("/{exp_id}/logdata.json", get(log_data).post(log_data))
        .route("/{exp_id}/theta.json", get(theta))
        .route("/{exp_id}/log.json", get(logs))
        .route(
            "/management/exp",
            post(create_experiment).get(list_experiments),
        )
        .route(
            "/management/exp/{id}",
            get(show_experiment)
                .put(update_experiment)
                .delete(delete_experiment),
        )
        .fallback(not_found)
        .layer(middleware::from_fn(limit_uri))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

async fn limit_uri(request: Request<Body>, next: Next) -> Response {
    if request.uri().to_string().len() > MAX_URI_BYTES {
        return ApiError::new(
            StatusCode::URI_TOO_LONG,
            "uri_too_long",
            format!("request target exceeds {MAX_URI_BYTES} bytes; use POST"),
        )
        .into_response();
    }
    next.run(request).await
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

/// Parameters of a protocol call, from the query string and, for POST, a
/// JSON object body. Body fields win.
struct Inputs {
    query: HashMap<String, String>,
    body: Map<String, Value>,
}

impl Inputs {
    fn parse(query: Option<String>, body: &Bytes) -> Result<Self, ApiError> {
        let query = form_urlencoded::parse(query.unwrap_or_default().as_bytes())
            .into_owned()
            .collect();
        let body = if body.iter().all(u8::is_ascii_whitespace) {
            Map::new()
        } else {
            match serde_json::from_slice(body) {
                Ok(Value::Object(map)) => map,
                _ => {
                    return Err(ApiError::bad_request(
                        "malformed_body",
                        "body must be a JSON object",
                    ))
                }
            }
        };
        Ok(Self { query, body })
    }

    fn text(&self, name: &str) -> Option<String> {
        match self.body.get(name) {
            Some(Value::String(s)) => Some(s.clone()),
            Some(other) if !other.is_null() => Some(other.to_string()),
            _ => self.query.get(name).cloned(),
        }
    }

    fn key(&self) -> String {
        self.text("key").unwrap_or_default()
    }

    /// `Ok(None)` when absent, `Err` when present but not valid JSON.
    fn document(&self, param: Param) -> Result<Option<Document>, Param> {
        if let Some(doc) = self.body.get(param.name()) {
            return Ok(Some(doc.clone()));
        }
        match self.query.get(param.name()) {
            None => Ok(None),
            Some(raw) => serde_json::from_str(raw).map(Some).map_err(|_| param),
        }
    }
}

fn experiment_id(raw: &str) -> Option<u64> {
    raw.parse().ok().filter(|id| *id > 0)
}

/// Authenticates before reporting a malformed parameter, so bad requests
/// with a wrong key still look like auth failures.
fn malformed(state: &AppState, id: Option<u64>, key: &str, param: Param) -> ApiError {
    let id = match id {
        Some(id) => id,
        None => return ApiError::unauthorized(),
    };
    match state.service.authorize(id, Access::Key(key)) {
        Ok(()) => ApiError::from(banditry_core::service::ServiceError::Malformed(param)),
        Err(e) => e.into(),
    }
}

async fn get_action(
    State(state): State<Shared>,
    Path(exp): Path<String>,
    RawQuery(query): RawQuery,
    body: Bytes,
) -> Result<Response, ApiError> {
    let inputs = Inputs::parse(query, &body)?;
    let id = experiment_id(&exp);
    let key = inputs.key();
    let context = match inputs.document(Param::Context) {
        Ok(doc) => doc.unwrap_or_else(|| json!({})),
        Err(p) => return Err(malformed(&state, id, &key, p)),
    };
    let id = id.ok_or_else(ApiError::unauthorized)?;
    let action = state.service.get_action(id, &key, context)?;
    Ok(ok(json!({ "action": action })))
}

async fn set_reward(
    State(state): State<Shared>,
    Path(exp): Path<String>,
    RawQuery(query): RawQuery,
    body: Bytes,
) -> Result<Response, ApiError> {
    let inputs = Inputs::parse(query, &body)?;
    let id = experiment_id(&exp);
    let key = inputs.key();
    let mut docs = Vec::with_capacity(3);
    for param in [Param::Context, Param::Action, Param::Reward] {
        match inputs.document(param) {
            Ok(Some(doc)) => docs.push(doc),
            Ok(None) | Err(_) => return Err(malformed(&state, id, &key, param)),
        }
    }
    let id = id.ok_or_else(ApiError::unauthorized)?;
    let reward = docs.pop().expect("three documents");
    let action = docs.pop().expect("three documents");
    let context = docs.pop().expect("three documents");
    state
        .service
        .set_reward(id, &key, context, action, reward)?;
    Ok(ok(json!({"status": "ok"})))
}

async fn log_data(
    State(state): State<Shared>,
    Path(exp): Path<String>,
    RawQuery(query): RawQuery,
    body: Bytes,
) -> Result<Response, ApiError> {
    let inputs = Inputs::parse(query, &body)?;
    let id = experiment_id(&exp).ok_or_else(ApiError::unauthorized)?;
    let key = inputs.key();
    let data = match inputs.body.get("data") {
        Some(doc) => doc.clone(),
        None => match inputs.query.get("data") {
            Some(raw) => serde_json::from_str(raw).map_err(|_| {
                state
                    .service
                    .authorize(id, Access::Key(&key))
                    .map_or_else(ApiError::from, |_| {
                        ApiError::bad_request("malformed_data", "`data` must be JSON")
                    })
            })?,
            None => json!({}),
        },
    };
    let record = state.service.log_data(id, &key, data)?;
    Ok(ok(json!({"status": "ok", "t": record.t})))
}

/// Key or admin token, whichever the caller presented.
fn access<'a>(state: &AppState, headers: &HeaderMap, key: &'a str) -> Result<Access<'a>, ApiError> {
    match state.admin(headers) {
        Some(true) => Ok(Access::Admin),
        Some(false) => Err(ApiError::admin_token()),
        None => Ok(Access::Key(key)),
    }
}

async fn theta(
    State(state): State<Shared>,
    Path(exp): Path<String>,
    RawQuery(query): RawQuery,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let inputs = Inputs::parse(query, &Bytes::new())?;
    let id = experiment_id(&exp).ok_or_else(ApiError::unauthorized)?;
    let key = inputs.key();
    let nonempty = |name: &str| inputs.text(name).filter(|s| !s.is_empty());
    let filter = ThetaFilter {
        name: nonempty("name"),
        key: nonempty("key_field"),
        value: nonempty("value"),
    };
    let records = state
        .service
        .theta(id, access(&state, &headers, &key)?, &filter)?;
    Ok(ok(json!({ "theta": records })))
}

fn count(inputs: &Inputs, name: &str, default: usize) -> Result<usize, ApiError> {
    match inputs.text(name).filter(|s| !s.is_empty()) {
        None => Ok(default),
        Some(raw) => raw.parse().map_err(|_| {
            ApiError::bad_request(
                "malformed_query",
                format!("`{name}` must be a non-negative integer"),
            )
        }),
    }
}

async fn logs(
    State(state): State<Shared>,
    Path(exp): Path<String>,
    RawQuery(query): RawQuery,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let inputs = Inputs::parse(query, &Bytes::new())?;
    let id = experiment_id(&exp).ok_or_else(ApiError::unauthorized)?;
    let key = inputs.key();
    let access = access(&state, &headers, &key)?;
    let limit = count(&inputs, "limit", DEFAULT_LOG_LIMIT)?;
    let offset = count(&inputs, "offset", 0)?;
    let records = state.service.logs(id, access, limit, offset)?;
    let total = state.service.logbook().len(id);
    Ok(ok(json!({
        "records": records,
        "total": total,
        "limit": limit.min(banditry_core::experiment::MAX_PAGE),
        "offset": offset,
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    name: String,
    config: PolicyConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UpdateRequest {
    config: PolicyConfig,
}

fn body_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("malformed_body", e.to_string()))
}

fn management_id(raw: &str) -> Result<u64, ApiError> {
    experiment_id(raw).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no experiment {raw:?}"),
        )
    })
}

async fn create_experiment(
    State(state): State<Shared>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    state.require_admin(&headers)?;
    let request: CreateRequest = body_json(&body)?;
    let experiment = state
        .service
        .create_experiment(&request.name, request.config)?;
    Ok(ok(json!({"id": experiment.id, "key": experiment.key})))
}

async fn list_experiments(
    State(state): State<Shared>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    state.require_admin(&headers)?;
    Ok(ok(
        json!({ "experiments": state.service.list_experiments() }),
    ))
}

async fn show_experiment(
    State(state): State<Shared>,
    Path(raw): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    state.require_admin(&headers)?;
    let id = management_id(&raw)?;
    let summary = state
        .service
        .experiments()
        .get(id)
        .ok_or_else(|| ApiError::from(banditry_core::service::ServiceError::NotFound(id)))?;
    Ok(ok(json!(summary)))
}

async fn update_experiment(
    State(state): State<Shared>,
    Path(raw): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    state.require_admin(&headers)?;
    let id = management_id(&raw)?;
    let request: UpdateRequest = body_json(&body)?;
    let summary = state.service.update_experiment(id, request.config)?;
    Ok(ok(json!(summary)))
}

async fn delete_experiment(
    State(state): State<Shared>,
    Path(raw): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    state.require_admin(&headers)?;
    let id = management_id(&raw)?;
    state.service.delete_experiment(id)?;
    Ok(ok(json!({"status": "ok"})))
}
