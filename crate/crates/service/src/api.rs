//! HTTP routes.
//!
//! | method | path                        | access                         |
//! |--------|-----------------------------|--------------------------------|
//! | POST   | `/surveys`                  | admin                          |
//! | GET    | `/surveys/{id}/session`     | public                         |
//! | POST   | `/surveys/{id}/responses`   | public (session token)         |
//! | GET    | `/surveys/{id}/data`        | public if `show_table`, admin  |
//! | GET    | `/surveys/{id}/data.csv`    | public if `allow_download`, admin |
//! | GET    | `/surveys/{id}/estimate`    | admin                          |
//!
//! Admin requests carry `Authorization: Bearer <admin token>`.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::config::SurveyRequest;
use crate::error::ServiceError;
use crate::service::SurveyService;

pub fn router(service: Arc<SurveyService>) -> Router {
    Router::new()
        .route("/surveys", post(create_survey))
        .route("/surveys/{id}/session", get(open_session))
        .route("/surveys/{id}/responses", post(submit_response))
        .route("/surveys/{id}/data", get(get_table))
        .route("/surveys/{id}/data.csv", get(get_csv))
        .route("/surveys/{id}/estimate", get(get_estimate))
        .with_state(service)
}

/// Serves `service` on `listener`, sweeping expired tickets in the background.
pub async fn serve(
    listener: tokio::net::TcpListener,
    service: Arc<SurveyService>,
) -> std::io::Result<()> {
    let sweeper = service.clone();
    let period = service
        .settings()
        .ticket_ttl
        .min(Duration::from_secs(60))
        .max(Duration::from_secs(1));
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(period);
        loop {
            interval.tick().await;
            let removed = sweeper.tickets().purge_expired();
            if removed > 0 {
                tracing::debug!(removed, "expired tickets purged");
            }
        }
    });
    axum::serve(listener, router(service)).await
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
}

fn require_admin(service: &SurveyService, headers: &HeaderMap) -> Result<(), ServiceError> {
    if service.is_admin(bearer(headers)) {
        Ok(())
    } else {
        Err(ServiceError::Forbidden("admin token required"))
    }
}

async fn blocking<T, F>(service: &Arc<SurveyService>, f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce(&SurveyService) -> Result<T, ServiceError> + Send + 'static,
{
    let service = service.clone();
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body)
        .map_err(|e| ServiceError::Validation(format!("bad request body: {e}")))
}

#[derive(Serialize)]
struct Created {
    id: String,
}

async fn create_survey(
    State(service): State<Arc<SurveyService>>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ServiceError> {
    require_admin(&service, &headers)?;
    let request: SurveyRequest = parse_json(&body)?;
    let id = blocking(&service, move |s| s.create_survey(request)).await?;
    Ok((StatusCode::CREATED, Json(Created { id })).into_response())
}

async fn open_session(
    State(service): State<Arc<SurveyService>>,
    Path(id): Path<String>,
) -> Result<Response, ServiceError> {
    let view = service.open_session(&id)?;
    Ok(([(header::CACHE_CONTROL, "no-store")], Json(view)).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Submission {
    token: String,
    answers: Vec<String>,
}

#[derive(Serialize)]
struct Recorded {
    status: &'static str,
}

async fn submit_response(
    State(service): State<Arc<SurveyService>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let submission: Submission = parse_json(&body)?;
    blocking(&service, move |s| {
        s.submit_response(&id, &submission.token, &submission.answers)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(Recorded { status: "recorded" })).into_response())
}

async fn get_table(
    State(service): State<Arc<SurveyService>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ServiceError> {
    let admin = service.is_admin(bearer(&headers));
    let table = blocking(&service, move |s| s.get_table(&id, admin)).await?;
    Ok(Json(table).into_response())
}

async fn get_csv(
    State(service): State<Arc<SurveyService>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ServiceError> {
    let admin = service.is_admin(bearer(&headers));
    let (filename, bytes) = blocking(&service, move |s| s.get_csv(&id, admin)).await?;
    let disposition = format!("attachment; filename=\"{filename}\"");
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_string()),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        bytes,
    )
        .into_response())
}

fn confidence_from_query(query: Option<&str>) -> Result<f64, ServiceError> {
    let Some(query) = query else {
        return Ok(0.95);
    };
    for pair in query.split('&') {
        if let Some(value) = pair.strip_prefix("conf=") {
            return value
                .parse::<f64>()
                .map_err(|_| ServiceError::Validation(format!("conf {value:?} is not a number")));
        }
    }
    Ok(0.95)
}

async fn get_estimate(
    State(service): State<Arc<SurveyService>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    RawQuery(query): RawQuery,
) -> Result<Response, ServiceError> {
    require_admin(&service, &headers)?;
    let conf = confidence_from_query(query.as_deref())?;
    let estimate = blocking(&service, move |s| s.get_estimate(&id, conf)).await?;
    Ok(Json(estimate).into_response())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conf_query() {
        assert_eq!(confidence_from_query(None).unwrap(), 0.95);
        assert_eq!(confidence_from_query(Some("conf=0.9")).unwrap(), 0.9);
        assert_eq!(confidence_from_query(Some("x=1&conf=0.99")).unwrap(), 0.99);
        assert!(confidence_from_query(Some("conf=abc")).is_err());
    }

    #[test]
    fn bearer_header() {
        let mut headers = HeaderMap::new();
        assert_eq!(bearer(&headers), None);
        headers.insert(header::AUTHORIZATION, "Bearer abc".parse().unwrap());
        assert_eq!(bearer(&headers), Some("abc"));
    }
}
