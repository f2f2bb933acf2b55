//! Remote row-append storage with a cached bearer token.
//!
//! The vendor-specific client lives outside this crate; anything that can
//! append a row of tokens to a sheet identified by an opaque key can back a
//! survey by implementing [`RowAppendBackend`]. [`MockSheetBackend`] is the
//! in-tree implementation used by tests.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{export_filename, render_csv, ResponseRecord, StoreError, StoreSchema};

fn default_retry_limit() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    200
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteBackendConfig {
    pub sheet_key: String,
    /// File holding the cached credential.
    pub token_path: PathBuf,
    /// Total attempts per append, including the first.
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    /// Delay before the first retry; doubles after each failure.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl RemoteBackendConfig {
    pub fn new(sheet_key: impl Into<String>, token_path: impl Into<PathBuf>) -> Self {
        RemoteBackendConfig {
            sheet_key: sheet_key.into(),
            token_path: token_path.into(),
            retry_limit: default_retry_limit(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.sheet_key.trim().is_empty() {
            return Err(StoreError::InvalidRemoteConfig("sheet_key is empty".into()));
        }
        if self.retry_limit == 0 {
            return Err(StoreError::InvalidRemoteConfig(
                "retry_limit must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Reads the cached credential from `token_path`.
    pub fn load_token(&self) -> Result<BearerToken, StoreError> {
        let raw = fs::read_to_string(&self.token_path).map_err(|e| {
            StoreError::Auth(format!(
                "cannot read token file {}: {}",
                self.token_path.display(),
                e.kind()
            ))
        })?;
        let token = raw.trim();
        if token.is_empty() {
            return Err(StoreError::Auth(format!(
                "token file {} is empty",
                self.token_path.display()
            )));
        }
        Ok(BearerToken(token.to_string()))
    }
}

impl fmt::Debug for RemoteBackendConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteBackendConfig")
            .field("sheet_key", &self.sheet_key)
            .field("token_path", &self.token_path)
            .field("retry_limit", &self.retry_limit)
            .field("backoff_ms", &self.backoff_ms)
            .finish()
    }
}

/// A credential. Its `Debug` output is redacted.
#[derive(Clone, PartialEq, Eq)]
pub struct BearerToken(String);

impl BearerToken {
    pub fn new(token: impl Into<String>) -> Self {
        BearerToken(token.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for BearerToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("BearerToken(<redacted>)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendFailure {
    /// The credential was refused. Not retried.
    Unauthorized(String),
    /// Transient failure. Retried with backoff.
    Unavailable(String),
}

pub trait RowAppendBackend: Send + Sync {
    fn append_row(
        &self,
        sheet_key: &str,
        token: &BearerToken,
        row: &[String],
    ) -> Result<(), BackendFailure>;

    /// Data rows of the sheet, header excluded, in append order.
    fn fetch_rows(
        &self,
        sheet_key: &str,
        token: &BearerToken,
    ) -> Result<Vec<Vec<String>>, BackendFailure>;
}

/// Appends one row, retrying transient failures up to `retry_limit` total
/// attempts with exponential backoff. Failures are returned, never dropped.
pub fn remote_append(
    backend: &dyn RowAppendBackend,
    config: &RemoteBackendConfig,
    record: &ResponseRecord,
) -> Result<(), StoreError> {
    config.validate()?;
    let token = config.load_token()?;
    let mut delay = Duration::from_millis(config.backoff_ms);
    let mut last = String::new();
    for attempt in 1..=config.retry_limit {
        match backend.append_row(&config.sheet_key, &token, record.values()) {
            Ok(()) => return Ok(()),
            Err(BackendFailure::Unauthorized(msg)) => return Err(StoreError::Auth(msg)),
            Err(BackendFailure::Unavailable(msg)) => {
                tracing::warn!(attempt, "remote append failed: {msg}");
                last = msg;
                if attempt < config.retry_limit {
                    thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                }
            }
        }
    }
    Err(StoreError::RemoteUnavailable {
        attempts: config.retry_limit,
        last,
    })
}

/// A survey store backed by a remote sheet. Appends are serialized.
pub struct RemoteStore {
    config: RemoteBackendConfig,
    schema: StoreSchema,
    backend: Arc<dyn RowAppendBackend>,
    writer: Mutex<()>,
}

impl RemoteStore {
    pub fn new(
        config: RemoteBackendConfig,
        schema: StoreSchema,
        backend: Arc<dyn RowAppendBackend>,
    ) -> Result<Self, StoreError> {
        config.validate()?;
        Ok(RemoteStore {
            config,
            schema,
            backend,
            writer: Mutex::new(()),
        })
    }

    pub fn schema(&self) -> StoreSchema {
        self.schema
    }

    pub fn config(&self) -> &RemoteBackendConfig {
        &self.config
    }

    pub fn append(&self, record: &ResponseRecord) -> Result<(), StoreError> {
        self.schema.check(record)?;
        let _guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        remote_append(self.backend.as_ref(), &self.config, record)
    }

    pub fn load_all(&self) -> Result<Vec<ResponseRecord>, StoreError> {
        let token = self.config.load_token()?;
        let rows = self
            .backend
            .fetch_rows(&self.config.sheet_key, &token)
            .map_err(|failure| match failure {
                BackendFailure::Unauthorized(msg) => StoreError::Auth(msg),
                BackendFailure::Unavailable(last) => {
                    StoreError::RemoteUnavailable { attempts: 1, last }
                }
            })?;
        rows.into_iter()
            .map(|row| {
                let record = ResponseRecord::new(row);
                self.schema.check(&record).map(|()| record)
            })
            .collect()
    }

    pub fn export_csv(&self, today: NaiveDate) -> Result<(String, Vec<u8>), StoreError> {
        let records = self.load_all()?;
        Ok((export_filename(today), render_csv(self.schema, &records)))
    }
}

/// One recorded `append_row` call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppendCall {
    pub sheet_key: String,
    pub token: String,
    pub row: Vec<String>,
    pub accepted: bool,
}

/// In-memory sheet service recording every call verbatim.
#[derive(Debug, Default)]
pub struct MockSheetBackend {
    accepted_token: Option<String>,
    failures_remaining: AtomicU32,
    sheets: Mutex<HashMap<String, Vec<Vec<String>>>>,
    calls: Mutex<Vec<AppendCall>>,
}

impl MockSheetBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Only `token` will be accepted; anything else is `Unauthorized`.
    pub fn requiring_token(token: impl Into<String>) -> Self {
        MockSheetBackend {
            accepted_token: Some(token.into()),
            ..Self::default()
        }
    }

    /// The next `n` appends fail with `Unavailable`.
    pub fn fail_next(&self, n: u32) {
        self.failures_remaining.store(n, Ordering::SeqCst);
    }

    pub fn rows(&self, sheet_key: &str) -> Vec<Vec<String>> {
        self.sheets
            .lock()
            .unwrap()
            .get(sheet_key)
            .cloned()
            .unwrap_or_default()
    }

    pub fn row_count(&self, sheet_key: &str) -> usize {
        self.rows(sheet_key).len()
    }

    pub fn calls(&self) -> Vec<AppendCall> {
        self.calls.lock().unwrap().clone()
    }

    fn authorize(&self, token: &BearerToken) -> Result<(), BackendFailure> {
        match &self.accepted_token {
            Some(expected) if expected != token.expose() => {
                Err(BackendFailure::Unauthorized("token rejected".into()))
            }
            _ => Ok(()),
        }
    }
}

impl RowAppendBackend for MockSheetBackend {
    fn append_row(
        &self,
        sheet_key: &str,
        token: &BearerToken,
        row: &[String],
    ) -> Result<(), BackendFailure> {
        let mut call = AppendCall {
            sheet_key: sheet_key.to_string(),
            token: token.expose().to_string(),
            row: row.to_vec(),
            accepted: false,
        };
        let outcome = self.authorize(token).and_then(|()| {
            let failing = self
                .failures_remaining
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok();
            if failing {
                Err(BackendFailure::Unavailable("mock outage".into()))
            } else {
                Ok(())
            }
        });
        if outcome.is_ok() {
            call.accepted = true;
            self.sheets
                .lock()
                .unwrap()
                .entry(sheet_key.to_string())
                .or_default()
                .push(row.to_vec());
        }
        self.calls.lock().unwrap().push(call);
        outcome
    }

    fn fetch_rows(
        &self,
        sheet_key: &str,
        token: &BearerToken,
    ) -> Result<Vec<Vec<String>>, BackendFailure> {
        self.authorize(token)?;
        Ok(self.rows(sheet_key))
    }
}
