//! HTTP survey service: administrators register surveys, respondents open a
//! session to receive the device outcome and submit a yes/no answer once.
//! Data tables, CSV downloads and estimates are served per survey.

pub mod api;
pub mod config;
pub mod error;
pub mod service;
pub mod tickets;

pub use api::{router, serve};
pub use config::{DeviceConfig, OutcomeConfig, StorageRequest, SurveyConfig, SurveyRequest};
pub use error::ServiceError;
pub use service::{DataTable, ServiceSettings, SessionView, SurveyService, DEFAULT_TICKET_TTL};
pub use tickets::TokenError;
