use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Value};

use cratedig_core::audio;
use cratedig_core::catalog::{activity_for_song, prediction_diff, rescore, CatalogError};
use cratedig_core::classifier::ClassifierError;
use cratedig_core::{ClassConfig, ClassSet, SongRecord};

use crate::range::{parse_range, ByteRange};
use crate::{AppState, Snapshot, REVISION_HEADER};

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/songs", get(list_songs))
        .route("/api/songs/{id}/segments", get(song_segments))
        .route("/api/songs/{id}/plotdata", get(plot_data))
        .route("/api/segments/{song_id}/{index}/audio", get(segment_audio))
        .route("/api/classes", get(get_classes).put(put_classes))
        .route("/api/rescore", post(post_rescore))
        .with_state(state)
}

struct ApiError {
    status: StatusCode,
    message: String,
    details: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            details: None,
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, what)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }

    fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(d) = self.details {
            body["details"] = d;
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn revision_header(revision: u64) -> (header::HeaderName, HeaderValue) {
    (
        header::HeaderName::from_static(REVISION_HEADER),
        HeaderValue::from(revision),
    )
}

fn envelope(revision: u64, data: impl Serialize) -> Response {
    (
        [revision_header(revision)],
        Json(json!({ "revision": revision, "data": data })),
    )
        .into_response()
}

fn find_song<'a>(snap: &'a Snapshot, id: &str) -> Result<&'a SongRecord, ApiError> {
    snap.catalog
        .song(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown song {id}")))
}

fn class_errors(errors: &[ClassifierError]) -> Value {
    errors
        .iter()
        .map(|e| json!({ "class_id": e.class_id(), "error": e.to_string() }))
        .collect()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)
}

async fn list_songs(State(state): State<Arc<AppState>>) -> ApiResult {
    let snap = state.snapshot();
    let songs: Vec<Value> = snap
        .catalog
        .songs
        .iter()
        .map(|s| {
            json!({
                "song_id": s.song_id,
                "path": s.path,
                "duration": s.duration,
                "segment_count": s.segments.len(),
            })
        })
        .collect();
    Ok(envelope(snap.revision, songs))
}

async fn song_segments(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let snap = state.snapshot();
    let song = find_song(&snap, &id)?;
    let segments: Vec<Value> = song
        .segments
        .iter()
        .map(|seg| {
            json!({
                "index": seg.index,
                "start": seg.start,
                "end": seg.end,
                "snapped": seg.snapped,
                "non_music": seg.non_music,
                "classification": snap.catalog.result(&song.song_id, seg.index),
            })
        })
        .collect();
    Ok(envelope(snap.revision, segments))
}

async fn segment_audio(
    State(state): State<Arc<AppState>>,
    UrlPath((song_id, index)): UrlPath<(String, usize)>,
    headers: HeaderMap,
) -> ApiResult {
    let snap = state.snapshot();
    let song = find_song(&snap, &song_id)?;
    let seg = song
        .segments
        .get(index)
        .ok_or_else(|| ApiError::not_found(format!("song {song_id} has no segment {index}")))?;
    let (path, start, end) = (song.path.clone(), seg.start, seg.end);
    let wav = blocking(move || {
        let buf = audio::decode(Path::new(&path))?;
        let clip = audio::slice(&buf, start, end.min(buf.duration_seconds()))?;
        audio::wav_bytes(&clip)
    })
    .await?
    .map_err(ApiError::internal)?;

    let len = wav.len() as u64;
    let range = headers.get(header::RANGE).and_then(|v| v.to_str().ok());
    let common = [
        revision_header(snap.revision),
        (header::CONTENT_TYPE, HeaderValue::from_static("audio/wav")),
        (header::ACCEPT_RANGES, HeaderValue::from_static("bytes")),
    ];
    Ok(match parse_range(range, len) {
        ByteRange::Full => (common, wav).into_response(),
        ByteRange::Partial { start, end } => {
            let content_range =
                HeaderValue::from_str(&format!("bytes {start}-{end}/{len}")).map_err(ApiError::internal)?;
            let body = wav[start as usize..=end as usize].to_vec();
            (
                StatusCode::PARTIAL_CONTENT,
                common,
                [(header::CONTENT_RANGE, content_range)],
                body,
            )
                .into_response()
        }
        ByteRange::Unsatisfiable => {
            let content_range = HeaderValue::from_str(&format!("bytes */{len}")).map_err(ApiError::internal)?;
            (
                StatusCode::RANGE_NOT_SATISFIABLE,
                common,
                [(header::CONTENT_RANGE, content_range)],
            )
                .into_response()
        }
    })
}

async fn plot_data(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let snap = state.snapshot();
    let song = find_song(&snap, &id)?.clone();
    let pipeline = state.pipeline.clone();
    let path = song.path.clone();
    let duration = song.duration;
    let timeline = blocking(move || -> Result<_, CatalogError> {
        let buf = audio::decode(Path::new(&path))?;
        let activity = activity_for_song(Path::new(&path), &buf, &pipeline)?;
        Ok(activity.plot_timeline(duration, &pipeline.features))
    })
    .await?
    .map_err(ApiError::internal)?;

    let raw = song.raw_boundaries.times();
    let boundaries: Vec<Value> = song
        .boundaries
        .times()
        .iter()
        .map(|&t| json!({ "time": t, "snapped": !raw.iter().any(|&r| (r - t).abs() < 1e-9) }))
        .collect();
    let (time, speech, music) = match &timeline {
        Some(tl) => (tl.frame_times(), tl.speech_scores(), tl.music_scores()),
        None => (&[][..], &[][..], &[][..]),
    };
    let segments: Vec<Value> = song
        .segments
        .iter()
        .map(|s| {
            json!({
                "index": s.index,
                "start": s.start,
                "end": s.end,
                "predicted": snap.catalog.result(&song.song_id, s.index).map(|c| c.predicted.clone()),
            })
        })
        .collect();
    Ok(envelope(
        snap.revision,
        json!({
            "song_id": song.song_id,
            "duration": song.duration,
            "time": time,
            "speech_score": speech,
            "music_score": music,
            "boundaries": boundaries,
            "speech_windows": song.speech_windows,
            "music_windows": song.music_windows,
            "segments": segments,
        }),
    ))
}

async fn get_classes(State(state): State<Arc<AppState>>) -> ApiResult {
    let snap = state.snapshot();
    let working = state.working_classes();
    let active = &snap.catalog.class_config;
    Ok(envelope(
        snap.revision,
        json!({ "dirty": &working != active, "working": working, "active": active }),
    ))
}

async fn put_classes(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let config: ClassConfig = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("invalid class config: {e}")))?;
    let _writer = state.writer.lock().await;
    let st = state.clone();
    let checked = config.clone();
    blocking(move || ClassSet::build_all_errors(&checked, &st.encoder))
        .await?
        .map_err(|errors| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid class config").with_details(class_errors(&errors))
        })?;
    state.set_working(config.clone());
    let snap = state.snapshot();
    let dirty = config != snap.catalog.class_config;
    Ok(envelope(snap.revision, json!({ "dirty": dirty, "working": config })))
}

async fn post_rescore(State(state): State<Arc<AppState>>) -> ApiResult {
    let Ok(_writer) = state.writer.try_lock() else {
        return Err(ApiError::new(StatusCode::CONFLICT, "rescore already in progress"));
    };
    let st = state.clone();
    let (old, outcome) = blocking(move || {
        let snap = st.snapshot();
        let config = st.working_classes();
        let outcome = rescore(&snap.catalog, &config, &st.encoder);
        (snap, outcome)
    })
    .await?;
    let catalog = outcome.map_err(|e| match e {
        CatalogError::Classifier(c) => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid class config").with_details(class_errors(&[c]))
        }
        CatalogError::MissingCacheEntry(keys) => {
            ApiError::internal("audio embeddings missing from cache").with_details(json!(keys))
        }
        other => ApiError::internal(other),
    })?;
    let changed = prediction_diff(&old.catalog, &catalog);
    let revision = state.publish(catalog);
    Ok(envelope(
        revision,
        json!({ "previous_revision": old.revision, "changed_count": changed.len(), "changed": changed }),
    ))
}
