//! JSON-over-HTTP session API: create a session with demographics, search
//! the catalog, rate titles, fetch the two recommendation lists and score
//! them.
//!
//! | method | path | success |
//! |---|---|---|
//! | POST | `/api/session` `{age, gender}` | 201 `{session_id, …}` |
//! | GET | `/api/session/{id}` | 200 profile |
//! | GET | `/api/anime?query=&limit=` | 200 matches |
//! | POST | `/api/session/{id}/ratings` `{anime_id, score}` | 204 |
//! | GET | `/api/session/{id}/recommendations` | 200 `{similar, may_like, …}` |
//! | POST | `/api/session/{id}/feedback` `{list_score}` | 204 |
//!
//! Errors are `{code, message}` with a 4xx/5xx status.

use animerec_core::dataset::{age_to_category, AnimeId, Gender};
use animerec_core::engine::Recommender;
use animerec_core::hybridfilter::{Recommended, UserProfile};
use animerec_core::knowledgebase::{KbError, KnowledgeBase, ProfileEvent, ProfileStore};
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path as FsPath;
use std::sync::{Arc, Mutex};
use std::time::SystemTime;
use tokio::net::TcpListener;

pub const DEFAULT_SEARCH_LIMIT: usize = 20;
pub const MAX_SEARCH_LIMIT: usize = 100;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request",
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            code: "not_found",
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: message.into(),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code,
            message: &self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<KbError> for ApiError {
    fn from(e: KbError) -> Self {
        match e {
            KbError::SessionNotFound(_) | KbError::SessionId(_) => ApiError::not_found(e.to_string()),
            other => {
                log::error!("{other}");
                ApiError::internal(other.to_string())
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Session {
    profile: UserProfile,
    /// Bumped by every mutation.
    version: u64,
    /// Predictions and the profile version they were computed from.
    cache: Option<(u64, Arc<Vec<f32>>)>,
    #[allow(dead_code)]
    created_at: SystemTime,
}

/// Shared server state: the immutable engine plus live sessions.
pub struct AppState {
    engine: Recommender,
    store: ProfileStore,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
}

impl AppState {
    pub fn new(engine: Recommender, store: ProfileStore) -> Self {
        Self {
            engine,
            store,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    /// Loads the knowledge base in `dir`; profiles are kept under it.
    pub fn open(dir: &FsPath) -> Result<Self, String> {
        let kb = KnowledgeBase::load(dir).map_err(|e| e.to_string())?;
        let engine = Recommender::from_kb(&kb).map_err(|e| e.to_string())?;
        Ok(Self::new(engine, KnowledgeBase::profiles(dir)))
    }

    pub fn engine(&self) -> &Recommender {
        &self.engine
    }

    /// Live session, or one restored from its log.
    fn session(&self, id: &str) -> ApiResult<Arc<tokio::sync::Mutex<Session>>> {
        let mut sessions = self.sessions.lock().expect("session map poisoned");
        if let Some(s) = sessions.get(id) {
            return Ok(s.clone());
        }
        let stored = self.store.load(id)?;
        let session = Arc::new(tokio::sync::Mutex::new(Session {
            profile: stored.profile,
            version: 0,
            cache: None,
            created_at: SystemTime::now(),
        }));
        sessions.insert(id.to_string(), session.clone());
        Ok(session)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/session", post(create_session))
        .route("/api/session/{id}", get(get_session))
        .route("/api/session/{id}/ratings", post(rate))
        .route("/api/session/{id}/recommendations", get(recommendations))
        .route("/api/session/{id}/feedback", post(feedback))
        .route("/api/anime", get(search))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "titles": state.engine.catalog().len(),
        "clusters": state.engine.clusters().k,
    }))
}

#[derive(Deserialize)]
struct NewSession {
    age: i64,
    gender: String,
}

#[derive(Serialize)]
struct SessionView {
    session_id: String,
    gender: Gender,
    age_category: u8,
    ratings: Vec<RatingView>,
}

#[derive(Serialize)]
struct RatingView {
    anime_id: AnimeId,
    score: u8,
}

fn view(profile: &UserProfile) -> SessionView {
    SessionView {
        session_id: profile.id.clone(),
        gender: profile.gender,
        age_category: profile.age_category,
        ratings: profile
            .ratings()
            .iter()
            .map(|r| RatingView {
                anime_id: r.anime_id,
                score: r.score,
            })
            .collect(),
    }
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<NewSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let Json(req) = body?;
    let gender = match req.gender.to_ascii_lowercase().as_str() {
        "male" | "m" => Gender::Male,
        "female" | "f" => Gender::Female,
        other => return Err(ApiError::bad_request(format!("gender must be male or female, got {other:?}"))),
    };
    let age = u32::try_from(req.age).map_err(|_| ApiError::bad_request(format!("invalid age {}", req.age)))?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let profile = UserProfile::new(id.clone(), gender, age_to_category(age))
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    state.store.create(&profile)?;
    let body = view(&profile);
    let session = Session {
        profile,
        version: 0,
        cache: None,
        created_at: SystemTime::now(),
    };
    state
        .sessions
        .lock()
        .expect("session map poisoned")
        .insert(id, Arc::new(tokio::sync::Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let session = state.session(&id)?;
    let s = session.lock().await;
    Ok(Json(view(&s.profile)))
}

#[derive(Deserialize)]
struct NewRating {
    anime_id: AnimeId,
    score: i64,
}

async fn rate(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<NewRating>, JsonRejection>,
) -> ApiResult<StatusCode> {
    let session = state.session(&id)?;
    let Json(req) = body?;
    let score = u8::try_from(req.score)
        .ok()
        .filter(|s| (1..=10).contains(s))
        .ok_or_else(|| ApiError::bad_request(format!("score must be an integer in 1..=10, got {}", req.score)))?;
    if state.engine.catalog().get(req.anime_id).is_none() {
        return Err(ApiError::not_found(format!("unknown anime {}", req.anime_id)));
    }
    let mut s = session.lock().await;
    let timestamp = s.profile.next_timestamp();
    state.store.append(
        &id,
        &ProfileEvent::Rated {
            anime_id: req.anime_id,
            score,
            timestamp,
        },
    )?;
    s.profile
        .rate(req.anime_id, score, timestamp)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    s.version += 1;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Serialize)]
struct Item {
    anime_id: AnimeId,
    name: String,
    predicted_rating: Option<f32>,
    cluster: Option<usize>,
}

#[derive(Serialize)]
struct RecommendationsView {
    similar: Vec<Item>,
    may_like: Vec<Item>,
    cold_start: bool,
    /// Profile version the lists reflect.
    version: u64,
}

async fn recommendations(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<RecommendationsView>> {
    let session = state.session(&id)?;
    let mut s = session.lock().await;
    let predictions = match &s.cache {
        Some((v, p)) if *v == s.version => p.clone(),
        _ => {
            let p = Arc::new(state.engine.predict(&s.profile));
            s.cache = Some((s.version, p.clone()));
            p
        }
    };
    let recs = state.engine.recommend_with(&s.profile, &predictions);
    let items = |list: &[Recommended]| -> Vec<Item> {
        list.iter()
            .map(|r| Item {
                anime_id: r.anime_id,
                name: state
                    .engine
                    .catalog()
                    .get(r.anime_id)
                    .map(|t| t.name.clone())
                    .unwrap_or_default(),
                predicted_rating: r.predicted_rating,
                cluster: r.cluster,
            })
            .collect()
    };
    Ok(Json(RecommendationsView {
        similar: items(&recs.similar),
        may_like: items(&recs.may_like),
        cold_start: recs.cold_start,
        version: s.version,
    }))
}

#[derive(Deserialize)]
struct NewFeedback {
    list_score: i64,
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<NewFeedback>, JsonRejection>,
) -> ApiResult<StatusCode> {
    let session = state.session(&id)?;
    let Json(req) = body?;
    let list_score = u8::try_from(req.list_score)
        .ok()
        .filter(|s| (1..=10).contains(s))
        .ok_or_else(|| ApiError::bad_request(format!("list_score must be an integer in 1..=10, got {}", req.list_score)))?;
    let s = session.lock().await;
    state.store.append(
        &id,
        &ProfileEvent::Feedback {
            list_score,
            ratings: s.profile.ratings().len(),
        },
    )?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct SearchParams {
    query: Option<String>,
    limit: Option<usize>,
}

#[derive(Serialize)]
struct TitleView {
    anime_id: AnimeId,
    name: String,
    genres: Vec<String>,
    members: u64,
    mean_score: Option<f64>,
    cluster: Option<usize>,
}

async fn search(
    State(state): State<Arc<AppState>>,
    params: Result<Query<SearchParams>, QueryRejection>,
) -> ApiResult<Json<Vec<TitleView>>> {
    let Query(p) = params?;
    let query = p.query.unwrap_or_default();
    if query.trim().is_empty() {
        return Err(ApiError::bad_request("query must not be empty"));
    }
    let limit = p.limit.unwrap_or(DEFAULT_SEARCH_LIMIT).min(MAX_SEARCH_LIMIT);
    let hits = state.engine.catalog().search(query.trim(), limit);
    Ok(Json(
        hits.into_iter()
            .map(|t| TitleView {
                anime_id: t.anime_id,
                name: t.name.clone(),
                genres: t.genres.clone(),
                members: t.members,
                mean_score: t.mean_score,
                cluster: state.engine.clusters().cluster_of(t.anime_id),
            })
            .collect(),
    ))
}
