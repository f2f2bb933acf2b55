use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::NaiveDate;

use super::{export_filename, parse_csv, ResponseRecord, StoreError, StoreSchema};

/// A single-writer CSV file store.
///
/// Appends are serialized through an internal lock and flushed to disk
/// before `append` returns. Rows are never rewritten.
#[derive(Debug)]
pub struct CsvStore {
    path: PathBuf,
    schema: StoreSchema,
    inner: Mutex<Inner>,
}

#[derive(Debug)]
struct Inner {
    file: File,
    records: Vec<ResponseRecord>,
}

impl CsvStore {
    /// Opens `path`, creating it with just the header line if it does not
    /// exist (or is empty). An existing header must equal `schema`.
    pub fn open(path: impl AsRef<Path>, schema: StoreSchema) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let existing = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        let records = if existing.is_empty() {
            file.write_all(schema.header_line().as_bytes())?;
            file.sync_data()?;
            Vec::new()
        } else {
            let (_, records) = parse_csv(&existing, Some(schema))?;
            if !existing.ends_with(b"\n") {
                file.write_all(b"\n")?;
                file.sync_data()?;
            }
            records
        };
        Ok(CsvStore {
            path,
            schema,
            inner: Mutex::new(Inner { file, records }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn schema(&self) -> StoreSchema {
        self.schema
    }

    /// Number of rows appended or loaded so far.
    pub fn len(&self) -> usize {
        self.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn append(&self, record: &ResponseRecord) -> Result<(), StoreError> {
        self.schema.check(record)?;
        let mut inner = self.lock();
        inner.file.write_all(record.csv_line().as_bytes())?;
        inner.file.flush()?;
        inner.file.sync_data()?;
        inner.records.push(record.clone());
        Ok(())
    }

    /// Re-reads the file, validating every row against the schema.
    pub fn load_all(&self) -> Result<Vec<ResponseRecord>, StoreError> {
        let mut inner = self.lock();
        let bytes = fs::read(&self.path)?;
        let (_, records) = parse_csv(&bytes, Some(self.schema))?;
        inner.records.clone_from(&records);
        Ok(records)
    }

    /// In-memory view of the rows, without touching the disk.
    pub fn snapshot(&self) -> Vec<ResponseRecord> {
        self.lock().records.clone()
    }

    /// Download name and the exact bytes of the store file.
    pub fn export_csv(&self, today: NaiveDate) -> Result<(String, Vec<u8>), StoreError> {
        let _guard = self.lock();
        let bytes = fs::read(&self.path)?;
        Ok((export_filename(today), bytes))
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner
            .lock()
            .unwrap_or_else(|poisoned| poisoned.into_inner())
    }
}
