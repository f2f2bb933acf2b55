//! Append-only response storage.
//!
//! Only yes/no tokens (and, in split-sample mode, the device number) are
//! ever written. Local files use LF-terminated, unquoted CSV lines:
//!
//! ```text
//! resp
//! y
//! n
//! ```
//!
//! Readers also accept quoted fields.

mod local;
mod remote;

use std::fmt;
use std::io;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use local::CsvStore;
pub use remote::{
    remote_append, AppendCall, BackendFailure, BearerToken, MockSheetBackend, RemoteBackendConfig,
    RemoteStore, RowAppendBackend,
};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("storage I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("remote authentication failed: {0}")]
    Auth(String),
    #[error("remote backend unavailable after {attempts} attempts: {last}")]
    RemoteUnavailable { attempts: u32, last: String },
    #[error("invalid remote configuration: {0}")]
    InvalidRemoteConfig(String),
}

/// A single yes/no answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Answer {
    #[serde(rename = "y")]
    Yes,
    #[serde(rename = "n")]
    No,
}

impl Answer {
    pub fn token(self) -> &'static str {
        match self {
            Answer::Yes => "y",
            Answer::No => "n",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        match token {
            "y" => Some(Answer::Yes),
            "n" => Some(Answer::No),
            _ => None,
        }
    }
}

impl From<bool> for Answer {
    fn from(yes: bool) -> Self {
        if yes {
            Answer::Yes
        } else {
            Answer::No
        }
    }
}

/// Column layout of a store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreSchema {
    /// `resp`: one device.
    Single,
    /// `resp1,resp2`: both devices answered by each respondent.
    Paired,
    /// `device,resp`: each respondent answers one of two devices.
    Split,
}

impl StoreSchema {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            StoreSchema::Single => &["resp"],
            StoreSchema::Paired => &["resp1", "resp2"],
            StoreSchema::Split => &["device", "resp"],
        }
    }

    pub fn header_line(self) -> String {
        let mut line = self.columns().join(",");
        line.push('\n');
        line
    }

    pub fn from_header<S: AsRef<str>>(fields: &[S]) -> Option<Self> {
        [StoreSchema::Single, StoreSchema::Paired, StoreSchema::Split]
            .into_iter()
            .find(|schema| {
                schema.columns().len() == fields.len()
                    && schema
                        .columns()
                        .iter()
                        .zip(fields)
                        .all(|(c, f)| *c == f.as_ref())
            })
    }

    /// True if every token of `record` is legal for this schema.
    pub fn accepts(self, record: &ResponseRecord) -> bool {
        let values = record.values();
        if values.len() != self.columns().len() {
            return false;
        }
        let answer = |t: &String| Answer::from_token(t).is_some();
        match self {
            StoreSchema::Single | StoreSchema::Paired => values.iter().all(answer),
            StoreSchema::Split => (values[0] == "1" || values[0] == "2") && answer(&values[1]),
        }
    }

    pub fn check(self, record: &ResponseRecord) -> Result<(), StoreError> {
        if self.accepts(record) {
            Ok(())
        } else {
            Err(StoreError::SchemaMismatch(format!(
                "record {:?} does not fit {self}",
                record.values()
            )))
        }
    }
}

impl fmt::Display for StoreSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.columns().join(","))
    }
}

/// One stored row; nothing but schema tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResponseRecord {
    values: Vec<String>,
}

impl ResponseRecord {
    pub fn new(values: Vec<String>) -> Self {
        ResponseRecord { values }
    }

    pub fn single(answer: Answer) -> Self {
        Self::new(vec![answer.token().into()])
    }

    pub fn paired(first: Answer, second: Answer) -> Self {
        Self::new(vec![first.token().into(), second.token().into()])
    }

    /// `device` is 1 or 2.
    pub fn split(device: u8, answer: Answer) -> Self {
        Self::new(vec![device.to_string(), answer.token().into()])
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub(crate) fn csv_line(&self) -> String {
        let mut line = self.values.join(",");
        line.push('\n');
        line
    }
}

/// `mydata-YYYY-MM-DD.csv`
pub fn export_filename(today: NaiveDate) -> String {
    format!("mydata-{}.csv", today.format("%Y-%m-%d"))
}

pub(crate) fn render_csv(schema: StoreSchema, records: &[ResponseRecord]) -> Vec<u8> {
    let mut out = schema.header_line();
    for record in records {
        out.push_str(&record.csv_line());
    }
    out.into_bytes()
}

/// Parses CSV bytes with a header matching `schema` (or any known schema
/// when `schema` is `None`).
pub fn parse_csv(
    bytes: &[u8],
    schema: Option<StoreSchema>,
) -> Result<(StoreSchema, Vec<ResponseRecord>), StoreError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut rows = reader.records();
    let header = match rows.next() {
        Some(row) => row.map_err(csv_error)?,
        None => {
            return Err(StoreError::SchemaMismatch("missing header line".into()));
        }
    };
    let fields: Vec<&str> = header.iter().collect();
    let found = StoreSchema::from_header(&fields).ok_or_else(|| {
        StoreError::SchemaMismatch(format!("unknown header {:?}", fields.join(",")))
    })?;
    if let Some(expected) = schema {
        if expected != found {
            return Err(StoreError::SchemaMismatch(format!(
                "header is {found:?} ({found}), expected {expected}"
            )));
        }
    }
    let mut records = Vec::new();
    for row in rows {
        let row = row.map_err(csv_error)?;
        let record = ResponseRecord::new(row.iter().map(str::to_owned).collect());
        found.check(&record)?;
        records.push(record);
    }
    Ok((found, records))
}

fn csv_error(e: csv::Error) -> StoreError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => StoreError::Io(io),
            _ => unreachable!(),
        }
    } else {
        StoreError::SchemaMismatch(e.to_string())
    }
}

/// A survey's storage backend.
pub enum ResponseStore {
    Local(CsvStore),
    Remote(RemoteStore),
}

impl ResponseStore {
    pub fn schema(&self) -> StoreSchema {
        match self {
            ResponseStore::Local(s) => s.schema(),
            ResponseStore::Remote(s) => s.schema(),
        }
    }

    pub fn append(&self, record: &ResponseRecord) -> Result<(), StoreError> {
        match self {
            ResponseStore::Local(s) => s.append(record),
            ResponseStore::Remote(s) => s.append(record),
        }
    }

    pub fn load_all(&self) -> Result<Vec<ResponseRecord>, StoreError> {
        match self {
            ResponseStore::Local(s) => s.load_all(),
            ResponseStore::Remote(s) => s.load_all(),
        }
    }

    pub fn export_csv(&self, today: NaiveDate) -> Result<(String, Vec<u8>), StoreError> {
        match self {
            ResponseStore::Local(s) => s.export_csv(today),
            ResponseStore::Remote(s) => s.export_csv(today),
        }
    }
}
