//! HTTP API over a single study file.
//!
//! All mutations go through one writer: the handler clones the current
//! study, applies the change, persists it, and only then publishes the new
//! snapshot. Readers always see the last state that reached disk.

mod error;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use strataeval::corpus::context_window;
use strataeval::study::{AuditEntry, Judgment, StratumProgress};
use strataeval::{
    AllocationPlan, EvaluationReport, FrequencyTable, Phase, PosClass, Study, StudyConfig, Verdict, WeightMode,
};

pub use error::ApiError;

type ApiResult<T> = Result<Json<T>, ApiError>;

struct Inner {
    path: PathBuf,
    snapshot: RwLock<Arc<Study>>,
    writer: Mutex<()>,
}

/// Shared handle to the served study.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Serves `study`, persisting every change to `path`.
    pub fn new(study: Study, path: impl Into<PathBuf>) -> Self {
        AppState(Arc::new(Inner {
            path: path.into(),
            snapshot: RwLock::new(Arc::new(study)),
            writer: Mutex::new(()),
        }))
    }

    /// Loads the study file, reading the corpus from `corpus` if given.
    pub fn load(path: impl AsRef<Path>, corpus: Option<&Path>) -> Result<Self, strataeval::StudyError> {
        let path = path.as_ref();
        Ok(AppState::new(Study::load(path, corpus)?, path))
    }

    pub fn snapshot(&self) -> Arc<Study> {
        self.0.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn mutate<T>(&self, f: impl FnOnce(&mut Study) -> Result<T, ApiError>) -> Result<(T, Arc<Study>), ApiError> {
        let _guard = self.0.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut study = Study::clone(&self.snapshot());
        let out = f(&mut study)?;
        study.save(&self.0.path).map_err(ApiError::persist)?;
        let study = Arc::new(study);
        *self.0.snapshot.write().unwrap_or_else(|e| e.into_inner()) = study.clone();
        Ok((out, study))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StudySummary {
    pub phase: Phase,
    pub next_phase: Option<Phase>,
    pub config: StudyConfig,
    pub corpus_digest: String,
    pub progress: Vec<StratumProgress>,
    pub allocation: Option<AllocationPlan>,
    pub judged: usize,
    pub unjudged: usize,
    pub audit_entries: usize,
}

impl StudySummary {
    fn of(study: &Study) -> Self {
        let state = study.state();
        StudySummary {
            phase: state.phase,
            next_phase: state.phase.next(),
            config: state.config.clone(),
            corpus_digest: state.corpus_digest.clone(),
            progress: study.progress(),
            allocation: state.allocation.clone(),
            judged: state.judgments.len(),
            unjudged: study.unjudged_items().len(),
            audit_entries: state.audit_log.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub surface: String,
    pub is_center: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ItemView {
    pub item_index: usize,
    pub surface: String,
    pub tag: String,
    pub pos_class: PosClass,
    pub system_lemma: Option<String>,
    pub context: Vec<ContextEntry>,
    pub judgment: Option<Judgment>,
    pub progress: StratumProgress,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NextItem {
    pub phase: Phase,
    pub item: Option<ItemView>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JudgmentRequest {
    pub verdict: String,
    pub judge_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JudgmentAck {
    pub judgment: Judgment,
    pub audit: AuditEntry,
    pub progress: StratumProgress,
    pub next_item: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportView {
    pub phase: Phase,
    pub report: EvaluationReport,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/study", get(get_study))
        .route("/api/phase/advance", post(advance))
        .route("/api/items/next", get(next_item))
        .route("/api/items/{index}", get(get_item))
        .route("/api/items/{index}/judgment", post(post_judgment))
        .route("/api/report", get(get_report))
        .route("/api/frequency/{class}", get(get_frequency))
        .fallback(|| async { ApiError::new(axum::http::StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn get_study(State(app): State<AppState>) -> ApiResult<StudySummary> {
    Ok(Json(StudySummary::of(&app.snapshot())))
}

async fn advance(State(app): State<AppState>) -> ApiResult<StudySummary> {
    let (_, study) = app.mutate(|s| Ok(s.advance(Utc::now())?))?;
    Ok(Json(StudySummary::of(&study)))
}

fn parse_index(raw: &str) -> Result<usize, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::bad_request("invalid_index", format!("'{raw}' is not an item index")))
}

fn item_view(study: &Study, index: usize) -> Result<ItemView, ApiError> {
    let class = study.drawn_class(index).ok_or_else(|| ApiError::not_drawn(index))?;
    let corpus = study.corpus();
    let record = corpus.get(index).ok_or_else(|| ApiError::not_drawn(index))?;
    let context = context_window(corpus, index, study.config().context_radius)
        .map_err(|e| ApiError::from(strataeval::StudyError::from(e)))?
        .into_iter()
        .map(|t| ContextEntry {
            surface: t.record.surface.clone(),
            is_center: t.is_center,
        })
        .collect();
    let progress = study
        .progress()
        .into_iter()
        .find(|p| p.class == class)
        .expect("drawn items belong to a stratum");
    Ok(ItemView {
        item_index: index,
        surface: record.surface.clone(),
        tag: record.tag.clone(),
        pos_class: class,
        system_lemma: record.system_lemma.clone(),
        context,
        judgment: study.judgments().get(&index).cloned(),
        progress,
    })
}

async fn next_item(State(app): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<NextItem> {
    let filter = match q.get("stratum").map(String::as_str) {
        None | Some("") => None,
        Some(raw) => {
            let class = PosClass::from_str(raw)
                .ok()
                .filter(|c| c.is_stratum())
                .ok_or_else(|| ApiError::unknown_class(raw))?;
            Some(class)
        }
    };
    let study = app.snapshot();
    let item = study.next_unjudged(filter).map(|i| item_view(&study, i)).transpose()?;
    Ok(Json(NextItem {
        phase: study.phase(),
        item,
    }))
}

async fn get_item(State(app): State<AppState>, UrlPath(raw): UrlPath<String>) -> ApiResult<ItemView> {
    let index = parse_index(&raw)?;
    Ok(Json(item_view(&app.snapshot(), index)?))
}

async fn post_judgment(
    State(app): State<AppState>,
    UrlPath(raw): UrlPath<String>,
    body: Bytes,
) -> ApiResult<JudgmentAck> {
    let index = parse_index(&raw)?;
    let req: JudgmentRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request("invalid_body", format!("expected {{verdict, judge_id}}: {e}")))?;
    let verdict =
        Verdict::from_str(&req.verdict).map_err(|e| ApiError::bad_request("invalid_verdict", e.to_string()))?;
    let (_, study) = app.mutate(|s| Ok(s.record_judgment(index, verdict, &req.judge_id, Utc::now())?))?;
    let state = study.state();
    let class = study.drawn_class(index).expect("judged item is drawn");
    Ok(Json(JudgmentAck {
        judgment: state.judgments[&index].clone(),
        audit: state.audit_log.last().expect("judgment was logged").clone(),
        progress: study
            .progress()
            .into_iter()
            .find(|p| p.class == class)
            .expect("drawn items belong to a stratum"),
        next_item: study.next_unjudged(Some(class)),
    }))
}

async fn get_report(State(app): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<ReportView> {
    let study = app.snapshot();
    let report = study.report()?;
    let report = match q.get("mode").map(String::as_str) {
        None | Some("") => report,
        Some(raw) => {
            let mode = WeightMode::from_str(raw).map_err(|e| ApiError::bad_request("invalid_mode", e))?;
            report.with_primary(mode)
        }
    };
    Ok(Json(ReportView {
        phase: study.phase(),
        report,
    }))
}

async fn get_frequency(State(app): State<AppState>, UrlPath(raw): UrlPath<String>) -> ApiResult<FrequencyTable> {
    let class = PosClass::from_str(&raw)
        .ok()
        .filter(|c| c.is_stratum())
        .ok_or_else(|| ApiError::unknown_class(&raw))?;
    let study = app.snapshot();
    let table = strataeval::corpus::frequency_table(study.corpus(), class)
        .map_err(|e| ApiError::from(strataeval::StudyError::from(e)))?;
    Ok(Json(table))
}
