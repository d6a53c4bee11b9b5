//! HTTP JSON API.

use std::collections::BTreeMap;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State as AxState};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::state::{ClipEntry, ReviewItem, ReviewStatus};
use super::{parse_room, Decision, Service, ServiceError, StateError, SubmitMeta};
use crate::media_ingest::{store::is_valid_hash, FrameRef, Segment};
use crate::taxonomy::{Stage, Stage2Label};
use crate::verdict_parser::Verdict;
use crate::vlm_gateway::{frame_url, unix_millis};

const MAX_UPLOAD_BYTES: usize = 1 << 30;
const DEFAULT_PAGE_SIZE: usize = 50;
const MAX_AUDIT_PAGE: usize = 1000;

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", format!("{what} not found"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let (status, code) = match &e {
            ServiceError::UnsupportedMedia(_) => (StatusCode::UNSUPPORTED_MEDIA_TYPE, "UnsupportedMedia"),
            ServiceError::StoreFull { .. } => (StatusCode::INSUFFICIENT_STORAGE, "StoreFull"),
            ServiceError::DuplicateClip(_) => (StatusCode::CONFLICT, "DuplicateClip"),
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, "BadRequest"),
            ServiceError::State(StateError::UnknownItem(_)) => (StatusCode::NOT_FOUND, "UnknownItem"),
            ServiceError::State(StateError::AlreadyReviewed(_)) => (StatusCode::CONFLICT, "AlreadyReviewed"),
            ServiceError::Log(super::state::LogError::State(StateError::UnknownItem(_))) => {
                (StatusCode::NOT_FOUND, "UnknownItem")
            }
            ServiceError::Log(super::state::LogError::State(StateError::AlreadyReviewed(_))) => {
                (StatusCode::CONFLICT, "AlreadyReviewed")
            }
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "Internal"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(service: Service) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({"ok": true})) }))
        .route("/clips", post(submit_clip).get(list_clips))
        .route("/clips/:id", get(get_clip))
        .route("/segments/:id", get(get_segment))
        .route("/frames/:file", get(get_frame))
        .route("/queue", get(list_queue))
        .route("/review/:item_id", post(review))
        .route("/audit", get(audit))
        .route("/reports/latest", get(report))
        .route("/exports/overrides", get(export_overrides))
        .layer(middleware::from_fn_with_state(service.clone(), require_token))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(service)
}

/// Frames stay public so the model backend can fetch them.
async fn require_token(AxState(service): AxState<Service>, req: Request, next: Next) -> Response {
    let path = req.uri().path();
    let open = path.starts_with("/frames/") || path == "/health";
    if let (Some(token), false) = (&service.config().auth_token, open) {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or invalid bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

fn actor(headers: &HeaderMap, fallback: &str) -> String {
    headers
        .get("x-actor")
        .and_then(|v| v.to_str().ok())
        .filter(|v| !v.is_empty())
        .unwrap_or(fallback)
        .to_string()
}

#[derive(Debug, Deserialize)]
struct SubmitQuery {
    clip_id: Option<String>,
    room: Option<String>,
    participants: Option<u32>,
}

async fn submit_clip(
    AxState(service): AxState<Service>,
    Query(q): Query<SubmitQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    if body.is_empty() {
        return Err(ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, "UnsupportedMedia", "empty upload"));
    }
    let room = match q.room.as_deref() {
        Some(r) => Some(parse_room(r).ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", format!("unknown room {r:?}")))?),
        None => None,
    };
    let meta = SubmitMeta {
        clip_id: q.clip_id,
        room,
        participant_count: q.participants,
    };
    let receipt = service.submit(body.to_vec(), meta, &actor(&headers, "uploader")).await?;
    let status = if receipt.created {
        StatusCode::ACCEPTED
    } else {
        StatusCode::OK
    };
    Ok((status, Json(receipt)).into_response())
}

#[derive(Debug, Serialize)]
struct ClipView {
    clip_id: String,
    status: super::ClipStatus,
    room: crate::media_ingest::Room,
    duration: f64,
    participant_count: u32,
    file_sha256: String,
    submitted_at: u64,
    segments: Vec<String>,
    error: Option<String>,
}

impl From<&ClipEntry> for ClipView {
    fn from(c: &ClipEntry) -> Self {
        Self {
            clip_id: c.clip.clip_id.clone(),
            status: c.status,
            room: c.clip.room,
            duration: c.clip.duration,
            participant_count: c.clip.participant_count,
            file_sha256: c.file_sha256.clone(),
            submitted_at: c.submitted_at,
            segments: c.segments.clone(),
            error: c.error.clone(),
        }
    }
}

async fn list_clips(AxState(service): AxState<Service>) -> Json<Vec<ClipView>> {
    let mut clips: Vec<(u64, ClipView)> =
        service.read(|s| s.clips.values().map(|c| (c.submitted_seq, ClipView::from(c))).collect());
    clips.sort_by_key(|(seq, _)| *seq);
    Json(clips.into_iter().map(|(_, v)| v).collect())
}

async fn get_clip(AxState(service): AxState<Service>, Path(id): Path<String>) -> ApiResult<Json<ClipView>> {
    service
        .read(|s| s.clips.get(&id).map(ClipView::from))
        .map(Json)
        .ok_or_else(|| ApiError::not_found("clip"))
}

#[derive(Debug, Serialize)]
struct FrameView {
    index: usize,
    timestamp: f64,
    content_hash: String,
    url: String,
}

#[derive(Debug, Serialize)]
struct SegmentView {
    segment: Segment,
    frames: Vec<FrameView>,
    verdicts: Vec<Verdict>,
    review: Option<ReviewItem>,
}

fn frame_views(base: &str, frames: &[FrameRef]) -> Vec<FrameView> {
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| FrameView {
            index: i + 1,
            timestamp: f.timestamp,
            content_hash: f.content_hash.clone(),
            url: frame_url(base, &f.content_hash),
        })
        .collect()
}

async fn get_segment(AxState(service): AxState<Service>, Path(id): Path<String>) -> ApiResult<Json<SegmentView>> {
    let base = service.config().public_base_url.clone();
    service
        .read(|s| {
            s.segments.get(&id).map(|e| SegmentView {
                segment: e.ingested.segment.clone(),
                frames: frame_views(&base, &e.ingested.frameset.frames),
                verdicts: e.verdicts.clone(),
                review: s.items.get(&id).cloned(),
            })
        })
        .map(Json)
        .ok_or_else(|| ApiError::not_found("segment"))
}

async fn get_frame(AxState(service): AxState<Service>, Path(file): Path<String>) -> ApiResult<Response> {
    let hash = file
        .strip_suffix(".jpg")
        .filter(|h| is_valid_hash(h))
        .ok_or_else(|| ApiError::not_found("frame"))?;
    let bytes = service
        .ingest_store()
        .frames()
        .get(hash)
        .map_err(|_| ApiError::not_found("frame"))?;
    Ok((
        [
            (header::CONTENT_TYPE, "image/jpeg".to_string()),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable".to_string()),
            (header::ETAG, format!("\"{hash}\"")),
        ],
        bytes,
    )
        .into_response())
}

#[derive(Debug, Deserialize)]
struct QueueQuery {
    status: Option<String>,
    page: Option<usize>,
    page_size: Option<usize>,
}

#[derive(Debug, Serialize)]
struct QueueItemView {
    #[serde(flatten)]
    item: ReviewItem,
    room: crate::media_ingest::Room,
    frames: Vec<FrameView>,
}

#[derive(Debug, Serialize)]
struct QueuePage {
    items: Vec<QueueItemView>,
    page: usize,
    page_size: usize,
    total: usize,
}

async fn list_queue(AxState(service): AxState<Service>, Query(q): Query<QueueQuery>) -> ApiResult<Json<QueuePage>> {
    let status = match q.status.as_deref() {
        None | Some("") | Some("all") => None,
        Some(s) => Some(
            s.parse::<ReviewStatus>()
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", e))?,
        ),
    };
    let page = q.page.unwrap_or(1).max(1);
    let page_size = q.page_size.unwrap_or(DEFAULT_PAGE_SIZE).clamp(1, 500);
    let base = service.config().public_base_url.clone();
    let page_view = service.read(|s| {
        let all = s.queue(status);
        let items = all
            .iter()
            .skip((page - 1) * page_size)
            .take(page_size)
            .map(|item| {
                let seg = &s.segments[&item.segment_id];
                QueueItemView {
                    item: (*item).clone(),
                    room: s.clips[&item.clip_id].clip.room,
                    frames: frame_views(&base, &seg.ingested.frameset.frames),
                }
            })
            .collect();
        QueuePage {
            items,
            page,
            page_size,
            total: all.len(),
        }
    });
    Ok(Json(page_view))
}

#[derive(Debug, Deserialize)]
struct ReviewBody {
    decision: String,
    label: Option<String>,
    note: Option<String>,
    actor: Option<String>,
}

async fn review(
    AxState(service): AxState<Service>,
    Path(item_id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<ReviewBody>,
) -> ApiResult<Json<ReviewItem>> {
    let bad = |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidDecision", m);
    let decision = match body.decision.to_ascii_lowercase().as_str() {
        "confirm" => Decision::Confirm,
        "override" => {
            let label = body.label.as_deref().ok_or_else(|| bad("override needs a label".into()))?;
            Decision::Override {
                label: label.parse::<Stage2Label>().map_err(|e| bad(e.to_string()))?,
            }
        }
        other => return Err(bad(format!("unknown decision {other:?}"))),
    };
    let who = body.actor.unwrap_or_else(|| actor(&headers, "moderator"));
    let service2 = service.clone();
    let item = tokio::task::spawn_blocking(move || service2.review(&item_id, decision, body.note, &who))
        .await
        .expect("review task panicked")?;
    Ok(Json(item))
}

#[derive(Debug, Deserialize)]
struct AuditQuery {
    since: Option<u64>,
    limit: Option<usize>,
}

async fn audit(AxState(service): AxState<Service>, Query(q): Query<AuditQuery>) -> ApiResult<Response> {
    let limit = q.limit.unwrap_or(MAX_AUDIT_PAGE).clamp(1, MAX_AUDIT_PAGE);
    let events = service.audit_since(q.since.unwrap_or(0), limit)?;
    Ok(Json(json!({ "events": events, "last_seq": service.read(|s| s.last_seq) })).into_response())
}

async fn report(AxState(service): AxState<Service>) -> Json<serde_json::Value> {
    Json(service.read(|s| {
        let mut clips: BTreeMap<String, usize> = BTreeMap::new();
        for c in s.clips.values() {
            let key = serde_json::to_value(c.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            *clips.entry(key).or_default() += 1;
        }
        let mut per_stage: BTreeMap<Stage, BTreeMap<&str, usize>> = BTreeMap::new();
        let mut classified = 0;
        for e in s.segments.values() {
            classified += !e.verdicts.is_empty() as usize;
            for v in &e.verdicts {
                if let Some(l) = v.label {
                    *per_stage.entry(v.stage).or_default().entry(l.as_str()).or_default() += 1;
                }
            }
        }
        let count = |st| s.queue(Some(st)).len();
        let (confirmed, overridden) = (count(ReviewStatus::Confirmed), count(ReviewStatus::Overridden));
        let reviewed = confirmed + overridden;
        json!({
            "generated_at": unix_millis(),
            "backend": service.config().backend.describe(),
            "variant": service.config().variant,
            "clips": clips,
            "segments": s.segments.len(),
            "classified_segments": classified,
            "labels": per_stage,
            "queue": {
                "pending": count(ReviewStatus::Pending),
                "confirmed": confirmed,
                "overridden": overridden,
            },
            "moderator_agreement": if reviewed > 0 { Some(confirmed as f64 / reviewed as f64) } else { None },
            "last_seq": s.last_seq,
        })
    }))
}

async fn export_overrides(AxState(service): AxState<Service>) -> ApiResult<Response> {
    let records = service.override_records()?;
    let mut body = String::new();
    for r in &records {
        body.push_str(&serde_json::to_string(r).map_err(|e| ServiceError::BadRequest(e.to_string()))?);
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
