//! HTTP audit service: the candidate queue, radiograph images, verdict
//! intake and live accuracy metrics.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use radreg_core::eval::{audit_metrics, AuditCandidate, AuditMetrics, CandidateStatus, Decision, PredictionSet, Verdict, VerdictLedger};
use radreg_core::{AnatomicalRegion, Error};
use serde::{Deserialize, Serialize};

pub const PAGE_SIZE: usize = 50;

/// Immutable view of the queue and metrics, replaced after every write.
#[derive(Debug)]
struct Snapshot {
    queue: Vec<AuditCandidate>,
    active: HashMap<String, Verdict>,
    metrics: AuditMetrics,
}

pub struct AuditService {
    predictions: PredictionSet,
    candidates: Vec<AuditCandidate>,
    ledger: Mutex<VerdictLedger>,
    snapshot: RwLock<Arc<Snapshot>>,
}

impl AuditService {
    pub fn new(predictions: PredictionSet, candidates: Vec<AuditCandidate>, ledger: VerdictLedger) -> radreg_core::Result<Self> {
        let snapshot = Arc::new(snapshot(&predictions, &candidates, &ledger)?);
        Ok(AuditService {
            predictions,
            candidates,
            ledger: Mutex::new(ledger),
            snapshot: RwLock::new(snapshot),
        })
    }

    fn current(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn metrics(&self) -> AuditMetrics {
        self.current().metrics.clone()
    }

    /// Validates and records one verdict; the ledger is the single writer.
    pub fn submit(&self, verdict: Verdict) -> radreg_core::Result<bool> {
        if !self.candidates.iter().any(|c| c.id == verdict.candidate_id) {
            return Err(match self.predictions.get(&verdict.candidate_id) {
                Some(_) => Error::VerdictForUnflaggedRecord(verdict.candidate_id),
                None => Error::UnknownCandidate(verdict.candidate_id),
            });
        }
        let mut ledger = self.ledger.lock().expect("ledger lock");
        let grew = ledger.record_verdict(&self.candidates, verdict)?;
        if grew {
            let next = Arc::new(snapshot(&self.predictions, &self.candidates, &ledger)?);
            *self.snapshot.write().expect("snapshot lock") = next;
        }
        Ok(grew)
    }
}

fn snapshot(predictions: &PredictionSet, candidates: &[AuditCandidate], ledger: &VerdictLedger) -> radreg_core::Result<Snapshot> {
    Ok(Snapshot {
        queue: ledger.with_status(candidates),
        active: ledger.active().into_iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        metrics: audit_metrics(predictions, candidates, ledger)?,
    })
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Debug, Serialize)]
struct ErrorDetail {
    code: String,
    message: String,
}

struct ApiError(StatusCode, String, String);

impl ApiError {
    fn unprocessable(code: &str, message: impl Into<String>) -> Self {
        ApiError(StatusCode::UNPROCESSABLE_ENTITY, code.into(), message.into())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownCandidate(_) => StatusCode::NOT_FOUND,
            Error::VerdictForUnflaggedRecord(_) => StatusCode::CONFLICT,
            Error::InvalidVerdict(_) | Error::UnknownLabel(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.code().into(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail { code: self.1, message: self.2 },
        };
        (self.0, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    status: Option<String>,
    page: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RegionScore {
    pub region: AnatomicalRegion,
    pub probability: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CandidateItem {
    /// 1-based position in the full queue.
    pub position: usize,
    pub id: String,
    pub archive_label: AnatomicalRegion,
    pub predicted: AnatomicalRegion,
    pub confidence: f64,
    pub top3: Vec<RegionScore>,
    pub status: CandidateStatus,
    pub has_image: bool,
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CandidatePage {
    pub page: usize,
    pub page_size: usize,
    pub pages: usize,
    pub total: usize,
    pub remaining: usize,
    pub items: Vec<CandidateItem>,
}

async fn list_candidates(State(svc): State<Arc<AuditService>>, Query(q): Query<ListQuery>) -> Result<Json<CandidatePage>, ApiError> {
    let filter = match q.status.as_deref() {
        None | Some("all") => None,
        Some("pending") => Some(CandidateStatus::Pending),
        Some("decided") => Some(CandidateStatus::Decided),
        Some(other) => return Err(ApiError::unprocessable("invalid_query", format!("unknown status `{other}`"))),
    };
    let page = match q.page.as_deref() {
        None => 1,
        Some(p) => p
            .parse::<usize>()
            .ok()
            .filter(|p| *p >= 1)
            .ok_or_else(|| ApiError::unprocessable("invalid_query", format!("page must be a positive integer, got `{p}`")))?,
    };
    let snap = svc.current();
    let matching: Vec<(usize, &AuditCandidate)> = snap
        .queue
        .iter()
        .enumerate()
        .filter(|(_, c)| filter.is_none_or(|f| c.status == f))
        .collect();
    let items = matching
        .iter()
        .skip((page - 1) * PAGE_SIZE)
        .take(PAGE_SIZE)
        .map(|(i, c)| CandidateItem {
            position: i + 1,
            id: c.id.clone(),
            archive_label: c.archive_label,
            predicted: c.predicted,
            confidence: c.confidence,
            top3: c.top_k(3).into_iter().map(|(region, probability)| RegionScore { region, probability }).collect(),
            status: c.status,
            has_image: c.image_ref.is_some(),
            verdict: snap.active.get(&c.id).cloned(),
        })
        .collect();
    Ok(Json(CandidatePage {
        page,
        page_size: PAGE_SIZE,
        pages: matching.len().div_ceil(PAGE_SIZE),
        total: matching.len(),
        remaining: snap.metrics.pending,
        items,
    }))
}

async fn candidate_image(State(svc): State<Arc<AuditService>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let candidate = svc.candidates.iter().find(|c| c.id == id).ok_or_else(|| ApiError::from(Error::UnknownCandidate(id.clone())))?;
    let path: PathBuf = candidate
        .image_ref
        .clone()
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, "missing_file".into(), format!("no image recorded for `{id}`")))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError(StatusCode::NOT_FOUND, "missing_file".into(), format!("{}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Debug, Deserialize)]
struct VerdictBody {
    #[serde(flatten)]
    decision: Decision,
    reviewer: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerdictResponse {
    pub recorded: bool,
    pub verdict: Verdict,
    pub metrics: AuditMetrics,
}

async fn post_verdict(State(svc): State<Arc<AuditService>>, Path(id): Path<String>, body: Bytes) -> Result<Json<VerdictResponse>, ApiError> {
    let body: VerdictBody = serde_json::from_slice(&body).map_err(|e| ApiError::unprocessable("malformed_verdict", e.to_string()))?;
    let verdict = Verdict::new(id, body.decision, body.reviewer);
    let service = svc.clone();
    let submitted = verdict.clone();
    let recorded = tokio::task::spawn_blocking(move || service.submit(submitted))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "internal".into(), e.to_string()))??;
    Ok(Json(VerdictResponse {
        recorded,
        verdict,
        metrics: svc.metrics(),
    }))
}

async fn metrics(State(svc): State<Arc<AuditService>>) -> Json<AuditMetrics> {
    Json(svc.metrics())
}

pub fn router(service: Arc<AuditService>) -> Router {
    Router::new()
        .route("/candidates", get(list_candidates))
        .route("/candidates/{id}/image", get(candidate_image))
        .route("/candidates/{id}/verdict", post(post_verdict))
        .route("/metrics", get(metrics))
        .with_state(service)
}

/// Router with the review UI's static files mounted at `/`.
pub fn router_with_ui(service: Arc<AuditService>, ui_dir: Option<PathBuf>) -> Router {
    let api = router(service);
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(service: Arc<AuditService>, ui_dir: Option<PathBuf>, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("audit service listening on {}", listener.local_addr()?);
    axum::serve(listener, router_with_ui(service, ui_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
