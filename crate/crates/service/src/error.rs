use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use thiserror::Error;
use veilpoll_core::{DeviceError, EstimateError, StoreError};

use crate::tickets::TokenError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("{0}")]
    Validation(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("unknown survey {0:?}")]
    UnknownSurvey(String),
    #[error("survey {0:?} already exists")]
    DuplicateSurvey(String),
    #[error(transparent)]
    InvalidToken(#[from] TokenError),
    #[error("forbidden: {0}")]
    Forbidden(&'static str),
    #[error("no responses collected{0}")]
    EmptyDataset(String),
    #[error(transparent)]
    Storage(StoreError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::DegenerateDesign(_) => "degenerate_design",
            ServiceError::Validation(_) => "validation",
            ServiceError::SchemaMismatch(_) => "schema_mismatch",
            ServiceError::UnknownSurvey(_) => "unknown_survey",
            ServiceError::DuplicateSurvey(_) => "duplicate_survey",
            ServiceError::InvalidToken(TokenError::Unknown) => "invalid_token",
            ServiceError::InvalidToken(TokenError::Consumed) => "token_consumed",
            ServiceError::InvalidToken(TokenError::Expired) => "token_expired",
            ServiceError::Forbidden(_) => "forbidden",
            ServiceError::EmptyDataset(_) => "empty_dataset",
            ServiceError::Storage(StoreError::Auth(_)) => "remote_auth",
            ServiceError::Storage(StoreError::RemoteUnavailable { .. }) => "remote_unavailable",
            ServiceError::Storage(_) => "storage",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::DegenerateDesign(_)
            | ServiceError::Validation(_)
            | ServiceError::SchemaMismatch(_)
            | ServiceError::EmptyDataset(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::UnknownSurvey(_) => StatusCode::NOT_FOUND,
            ServiceError::DuplicateSurvey(_) | ServiceError::InvalidToken(_) => {
                StatusCode::CONFLICT
            }
            ServiceError::Forbidden(_) => StatusCode::FORBIDDEN,
            ServiceError::Storage(StoreError::Auth(_)) => StatusCode::BAD_GATEWAY,
            ServiceError::Storage(StoreError::RemoteUnavailable { .. }) => {
                StatusCode::SERVICE_UNAVAILABLE
            }
            ServiceError::Storage(_) | ServiceError::Internal(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }
}

impl From<DeviceError> for ServiceError {
    fn from(e: DeviceError) -> Self {
        match e {
            DeviceError::DegenerateDesign(msg) => ServiceError::DegenerateDesign(msg),
            other => ServiceError::Validation(other.to_string()),
        }
    }
}

impl From<EstimateError> for ServiceError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::DegenerateDesign(msg) => ServiceError::DegenerateDesign(msg),
            EstimateError::SchemaMismatch(msg) => ServiceError::SchemaMismatch(msg),
            EstimateError::EmptyDataset(msg) => ServiceError::EmptyDataset(msg),
            other => ServiceError::Validation(other.to_string()),
        }
    }
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::SchemaMismatch(msg) => ServiceError::SchemaMismatch(msg),
            StoreError::InvalidRemoteConfig(msg) => ServiceError::Validation(msg),
            other => ServiceError::Storage(other),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(kind = self.kind(), "request failed: {self}");
        }
        let body = ErrorBody {
            error: self.kind(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}
