//! REST front end over [`Engine`].
//!
//! | method | path                              | reply                         |
//! |--------|-----------------------------------|-------------------------------|
//! | POST   | `/experiments/setup`              | 303 to the upload page        |
//! | POST   | `/experiments/structures/{id}`    | HTML link to the stored file  |
//! | GET    | `/experiments/start/{id}`         | `OK`                          |
//! | GET    | `/experiments/status/{id}`        | one-line plain-text status    |
//! | GET    | `/experiments/download/{id}`      | tab-separated results file    |
//!
//! Failures carry a JSON body `{"code": ..., "message": ...}`.

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, RawQuery, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use modelcmp::store::MAX_STRUCTURE_BYTES;
use modelcmp::{ComparisonMode, Engine, Error, ExperimentConfig, Measure, MeasureSet, ScaleMode};

/// Request bodies up to this size reach the handlers, so oversized
/// structures get a proper 413 from the upload handler.
const BODY_LIMIT: usize = 4 * MAX_STRUCTURE_BYTES;

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.to_string(),
            message: message.into(),
        }
    }

    fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NOT_FOUND", format!("no experiment {id}"))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::State(_) | Error::DuplicateResult(_) => StatusCode::CONFLICT,
            Error::EntityTooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            Error::Format(_)
            | Error::MultiChain(_)
            | Error::TooFewStructures(_)
            | Error::CapExceeded { .. }
            | Error::Invalid(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "code": self.code, "message": self.message });
        (self.status, [(header::CONTENT_TYPE, "application/json")], body.to_string()).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(engine: Engine) -> Router {
    Router::new()
        .route("/experiments/setup", post(setup))
        .route("/experiments/structures/{id}", post(upload))
        .route("/experiments/structures/{id}/{file}", get(uploaded_file))
        .route("/experiments/start/{id}", get(start))
        .route("/experiments/status/{id}", get(status))
        .route("/experiments/download/{id}", get(download))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(engine)
}

/// Experiment ids are 32 lowercase hex digits; anything else cannot exist.
fn check_id(id: &str) -> ApiResult<()> {
    if id.len() == 32 && id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
        Ok(())
    } else {
        Err(ApiError::not_found(id))
    }
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, Error> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string()))?
        .map_err(ApiError::from)
}

/// Parses the setup form. `measures` may repeat or hold a comma-separated
/// list, optionally in brackets.
pub fn parse_setup_form(body: &[u8]) -> ApiResult<ExperimentConfig> {
    let mut label = None;
    let mut mode = None;
    let mut scale = None;
    let mut measures_seen = false;
    let mut measures: Vec<Measure> = Vec::new();
    for (key, value) in url::form_urlencoded::parse(body) {
        match key.as_ref() {
            "label" => label = Some(value.into_owned()),
            "mode" => mode = Some(value.into_owned()),
            "scale" => scale = Some(value.into_owned()),
            "measures" | "measures[]" => {
                measures_seen = true;
                let list = value.trim().trim_start_matches('[').trim_end_matches(']');
                for name in list.split([',', ';']).map(str::trim).filter(|s| !s.is_empty()) {
                    let m = name
                        .parse::<Measure>()
                        .map_err(|_| ApiError::bad_request("UNKNOWN_MEASURE", format!("unknown measure {name:?}")))?;
                    measures.push(m);
                }
            }
            _ => {}
        }
    }
    let missing = |field: &str| ApiError::bad_request("MISSING_FIELD", format!("missing form field {field:?}"));
    let label = label.ok_or_else(|| missing("label"))?;
    if !measures_seen {
        return Err(missing("measures"));
    }
    let measures = MeasureSet::new(measures)
        .map_err(|_| ApiError::bad_request("EMPTY_MEASURES", "at least one measure is required"))?;
    let mode_text = mode.ok_or_else(|| missing("mode"))?;
    let mode = mode_text
        .parse::<ComparisonMode>()
        .map_err(|_| ApiError::bad_request("UNKNOWN_MODE", format!("unknown mode {mode_text:?}")))?;
    let scale_text = scale.ok_or_else(|| missing("scale"))?;
    let scale = scale_text
        .parse::<ScaleMode>()
        .map_err(|_| ApiError::bad_request("UNKNOWN_SCALE", format!("unknown scale {scale_text:?}")))?;
    ExperimentConfig::new(label, measures, mode, scale).map_err(ApiError::from)
}

async fn setup(State(engine): State<Engine>, body: Bytes) -> ApiResult<Response> {
    let config = parse_setup_form(&body)?;
    let exp = blocking(move || engine.create_experiment(config)).await?;
    let location = format!("/experiments/structures/{}", exp.id);
    Ok((StatusCode::SEE_OTHER, [(header::LOCATION, location)]).into_response())
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

async fn upload(State(engine): State<Engine>, Path(id): Path<String>, mut form: Multipart) -> ApiResult<Response> {
    check_id(&id)?;
    let mut file = None;
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request("BAD_MULTIPART", e.body_text()))?
    {
        if field.name() != Some("file") {
            continue;
        }
        let name = field.file_name().unwrap_or("structure.pdb").to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request("BAD_MULTIPART", e.body_text()))?;
        file = Some((name, bytes));
        break;
    }
    let (filename, bytes) = file.ok_or_else(|| ApiError::bad_request("MISSING_FIELD", "missing form field \"file\""))?;
    let exp_id = id.clone();
    let sref = blocking(move || engine.upload_structure(&exp_id, &filename, &bytes)).await?;
    let file_id = sref.key.rsplit('/').next().unwrap_or_default();
    let body = format!(
        "<a href=\"/experiments/structures/{id}/{file_id}\">{}</a>",
        html_escape(&sref.name)
    );
    Ok(([(header::CONTENT_TYPE, "text/html; charset=utf-8")], body).into_response())
}

async fn uploaded_file(State(engine): State<Engine>, Path((id, file)): Path<(String, String)>) -> ApiResult<Response> {
    check_id(&id)?;
    if file.is_empty() || !file.bytes().all(|b| b.is_ascii_alphanumeric()) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such file"));
    }
    let key = format!("{id}/{file}");
    let bytes = blocking(move || engine.structure_file(&key)).await?;
    Ok(([(header::CONTENT_TYPE, "chemical/x-pdb")], bytes).into_response())
}

async fn start(State(engine): State<Engine>, Path(id): Path<String>) -> ApiResult<Response> {
    check_id(&id)?;
    blocking(move || engine.start(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], "OK").into_response())
}

async fn status(State(engine): State<Engine>, Path(id): Path<String>) -> ApiResult<Response> {
    check_id(&id)?;
    let exp = blocking(move || engine.experiment(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], exp.status_line()).into_response())
}

fn wants_histograms(query: Option<&str>) -> bool {
    query.is_some_and(|q| {
        url::form_urlencoded::parse(q.as_bytes())
            .any(|(k, v)| k == "histograms" && !matches!(v.as_ref(), "0" | "false" | "no"))
    })
}

/// Label reduced to characters that are safe in a download filename.
fn file_stem(label: &str) -> String {
    let stem: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    if stem.trim_matches(['_', '.']).is_empty() {
        "results".to_string()
    } else {
        stem
    }
}

async fn download(State(engine): State<Engine>, Path(id): Path<String>, RawQuery(query): RawQuery) -> ApiResult<Response> {
    check_id(&id)?;
    let histograms = wants_histograms(query.as_deref());
    let (label, body, content_type) = blocking(move || {
        let exp = engine.experiment(&id)?;
        if histograms {
            Ok((exp.config.label, engine.histograms_json(&id)?.into_bytes(), "application/json"))
        } else {
            Ok((exp.config.label, engine.results_file(&id)?, "text/tab-separated-values; charset=utf-8"))
        }
    })
    .await?;
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, content_type.parse().expect("static header"));
    if !histograms {
        let disposition = format!("attachment; filename=\"{}.tsv\"", file_stem(&label));
        headers.insert(
            header::CONTENT_DISPOSITION,
            disposition.parse().expect("filename is ASCII"),
        );
    }
    Ok((headers, body).into_response())
}
