use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use chrono::NaiveDate;
use rand::rngs::OsRng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use veilpoll_core::store::{CsvStore, RemoteStore, RowAppendBackend};
use veilpoll_core::{
    estimate_from_store, Answer, Estimate, RandomSource, ResponseRecord, ResponseStore, StoreSchema,
};

use crate::config::{StorageConfig, StorageDefaults, SurveyConfig, SurveyRequest};
use crate::error::ServiceError;
use crate::tickets::TicketTable;

pub const DEFAULT_TICKET_TTL: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Clone)]
pub struct ServiceSettings {
    /// Bearer token for administrative endpoints.
    pub admin_token: String,
    pub data_dir: PathBuf,
    /// Credential file for remote stores that do not name their own.
    pub remote_token_path: PathBuf,
    pub ticket_ttl: Duration,
    /// Seeds device draws for reproducible test runs. Live surveys leave
    /// this unset so every session draws from an OS-seeded generator.
    pub draw_seed: Option<u64>,
}

impl ServiceSettings {
    pub fn new(admin_token: impl Into<String>, data_dir: impl Into<PathBuf>) -> Self {
        let data_dir = data_dir.into();
        ServiceSettings {
            admin_token: admin_token.into(),
            remote_token_path: data_dir.join(".secrets").join("token"),
            data_dir,
            ticket_ttl: DEFAULT_TICKET_TTL,
            draw_seed: None,
        }
    }
}

pub struct Survey {
    pub config: SurveyConfig,
    pub store: ResponseStore,
}

/// What a respondent receives when opening a session.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionView {
    pub token: String,
    pub survey_id: String,
    pub title: String,
    pub instructions: String,
    pub privacy_notice: String,
    /// One statement per device the respondent must answer.
    pub statements: Vec<String>,
    pub show_table: bool,
    pub allow_download: bool,
    pub expires_in_secs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub type Clock = Arc<dyn Fn() -> NaiveDate + Send + Sync>;

enum DrawSource {
    Os,
    Seeded(Box<Mutex<ChaCha20Rng>>),
}

impl DrawSource {
    /// A fresh generator owned by a single session.
    fn session_rng(&self) -> ChaCha20Rng {
        match self {
            DrawSource::Os => ChaCha20Rng::from_rng(OsRng).expect("OS randomness unavailable"),
            DrawSource::Seeded(master) => {
                let mut master = master.lock().unwrap_or_else(|p| p.into_inner());
                ChaCha20Rng::from_rng(&mut *master).expect("ChaCha never fails")
            }
        }
    }
}

/// Survey registry, ticket table and stores.
pub struct SurveyService {
    settings: ServiceSettings,
    surveys: RwLock<HashMap<String, Arc<Survey>>>,
    tickets: TicketTable,
    draws: DrawSource,
    remote_backend: Option<Arc<dyn RowAppendBackend>>,
    clock: Clock,
}

impl SurveyService {
    pub fn new(settings: ServiceSettings) -> Self {
        let draws = match settings.draw_seed {
            Some(seed) => {
                DrawSource::Seeded(Box::new(Mutex::new(ChaCha20Rng::seed_from_u64(seed))))
            }
            None => DrawSource::Os,
        };
        SurveyService {
            tickets: TicketTable::new(settings.ticket_ttl),
            settings,
            surveys: RwLock::new(HashMap::new()),
            draws,
            remote_backend: None,
            clock: Arc::new(|| chrono::Local::now().date_naive()),
        }
    }

    /// Backend used by surveys with remote storage.
    pub fn with_remote_backend(mut self, backend: Arc<dyn RowAppendBackend>) -> Self {
        self.remote_backend = Some(backend);
        self
    }

    /// Date source for download file names.
    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn settings(&self) -> &ServiceSettings {
        &self.settings
    }

    pub fn tickets(&self) -> &TicketTable {
        &self.tickets
    }

    pub fn is_admin(&self, presented: Option<&str>) -> bool {
        presented
            .is_some_and(|p| constant_time_eq(p.as_bytes(), self.settings.admin_token.as_bytes()))
    }

    pub fn survey(&self, id: &str) -> Result<Arc<Survey>, ServiceError> {
        self.registry_read()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSurvey(id.to_string()))
    }

    pub fn survey_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.registry_read().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn create_survey(&self, request: SurveyRequest) -> Result<String, ServiceError> {
        let generated = crate::tickets::new_token()[..16].to_string();
        let defaults = StorageDefaults {
            data_dir: self.settings.data_dir.clone(),
            remote_token_path: self.settings.remote_token_path.clone(),
        };
        let config = request.validate(generated, &defaults)?;
        if self.registry_read().contains_key(&config.id) {
            return Err(ServiceError::DuplicateSurvey(config.id));
        }
        let schema = config.schema();
        let store = match &config.storage {
            StorageConfig::Local(path) => ResponseStore::Local(CsvStore::open(path, schema)?),
            StorageConfig::Remote(remote) => {
                let backend = self.remote_backend.clone().ok_or_else(|| {
                    ServiceError::Validation("no remote storage backend is configured".into())
                })?;
                ResponseStore::Remote(RemoteStore::new(remote.clone(), schema, backend)?)
            }
        };
        let id = config.id.clone();
        let mut registry = self.surveys.write().unwrap_or_else(|p| p.into_inner());
        if registry.contains_key(&id) {
            return Err(ServiceError::DuplicateSurvey(id));
        }
        registry.insert(id.clone(), Arc::new(Survey { config, store }));
        drop(registry);
        tracing::info!(survey = %id, schema = %schema, "survey created");
        Ok(id)
    }

    /// Draws the statement(s) for a new respondent and issues a ticket.
    pub fn open_session(&self, survey_id: &str) -> Result<SessionView, ServiceError> {
        let survey = self.survey(survey_id)?;
        let config = &survey.config;
        let mut rng = self.draws.session_rng();
        let (draws, group) = match config.schema() {
            StoreSchema::Single => (vec![config.devices[0].draw(&mut rng)], None),
            StoreSchema::Paired => (
                vec![
                    config.devices[0].draw(&mut rng),
                    config.devices[1].draw(&mut rng),
                ],
                None,
            ),
            StoreSchema::Split => {
                let group: u8 = if rng.next_unit() < 0.5 { 1 } else { 2 };
                let draw = config.devices[usize::from(group - 1)].draw(&mut rng);
                (vec![draw], Some(group))
            }
        };
        let statements: Vec<_> = draws.into_iter().map(|d| d.statement).collect();
        let texts = statements.iter().map(|s| s.text.clone()).collect();
        let token = self.tickets.issue(survey_id, statements, group);
        Ok(SessionView {
            token,
            survey_id: config.id.clone(),
            title: config.title.clone(),
            instructions: config.instructions.clone(),
            privacy_notice: config.privacy_notice.clone(),
            statements: texts,
            show_table: config.show_table,
            allow_download: config.allow_download,
            expires_in_secs: self.tickets.ttl().as_secs(),
        })
    }

    /// Records the answer(s) for an open ticket. Blocks on storage I/O.
    pub fn submit_response(
        &self,
        survey_id: &str,
        token: &str,
        answers: &[String],
    ) -> Result<(), ServiceError> {
        let survey = self.survey(survey_id)?;
        let schema = survey.store.schema();
        let expected = if schema == StoreSchema::Paired { 2 } else { 1 };
        if answers.len() != expected {
            return Err(ServiceError::Validation(format!(
                "expected {expected} answer(s), got {}",
                answers.len()
            )));
        }
        let parsed = answers
            .iter()
            .map(|a| {
                Answer::from_token(a).ok_or_else(|| {
                    ServiceError::Validation("answers must be \"y\" or \"n\"".into())
                })
            })
            .collect::<Result<Vec<_>, _>>()?;

        let claim = self.tickets.claim(survey_id, token)?;
        let record = match (schema, claim.group) {
            (StoreSchema::Single, _) => ResponseRecord::single(parsed[0]),
            (StoreSchema::Paired, _) => ResponseRecord::paired(parsed[0], parsed[1]),
            (StoreSchema::Split, Some(group)) => ResponseRecord::split(group, parsed[0]),
            (StoreSchema::Split, None) => {
                self.tickets.release(token);
                return Err(ServiceError::Internal("split ticket without group".into()));
            }
        };
        match survey.store.append(&record) {
            Ok(()) => {
                self.tickets.complete(token);
                tracing::info!(survey = %survey_id, "response recorded");
                Ok(())
            }
            Err(e) => {
                self.tickets.release(token);
                Err(e.into())
            }
        }
    }

    pub fn get_table(&self, survey_id: &str, admin: bool) -> Result<DataTable, ServiceError> {
        let survey = self.survey(survey_id)?;
        if !(survey.config.show_table || admin) {
            return Err(ServiceError::Forbidden(
                "this survey does not publish its data table",
            ));
        }
        let records = survey.store.load_all()?;
        Ok(DataTable {
            columns: survey
                .store
                .schema()
                .columns()
                .iter()
                .map(|c| c.to_string())
                .collect(),
            rows: records.into_iter().map(|r| r.values().to_vec()).collect(),
        })
    }

    /// Download file name and CSV bytes.
    pub fn get_csv(&self, survey_id: &str, admin: bool) -> Result<(String, Vec<u8>), ServiceError> {
        let survey = self.survey(survey_id)?;
        if !(survey.config.allow_download || admin) {
            return Err(ServiceError::Forbidden(
                "this survey does not allow downloads",
            ));
        }
        Ok(survey.store.export_csv((self.clock)())?)
    }

    pub fn get_estimate(&self, survey_id: &str, conf: f64) -> Result<Estimate, ServiceError> {
        let survey = self.survey(survey_id)?;
        let records = survey.store.load_all()?;
        Ok(estimate_from_store(
            &records,
            survey.store.schema(),
            survey.config.design(),
            conf,
        )?)
    }

    fn registry_read(&self) -> std::sync::RwLockReadGuard<'_, HashMap<String, Arc<Survey>>> {
        self.surveys.read().unwrap_or_else(|p| p.into_inner())
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DeviceConfig;
    use crate::tickets::TokenError;
    use std::fs;
    use tempfile::TempDir;
    use veilpoll_core::{AssignmentMode, Model};

    fn service(dir: &TempDir) -> SurveyService {
        let mut settings = ServiceSettings::new("admin", dir.path());
        settings.draw_seed = Some(7);
        SurveyService::new(settings)
    }

    fn warner() -> SurveyRequest {
        SurveyRequest {
            id: Some("smokers".into()),
            title: "Warner survey".into(),
            instructions: "Answer truthfully.".into(),
            privacy_notice: "Only your Yes/No response is stored.".into(),
            model: Model::Warner,
            devices: vec![DeviceConfig::warner(
                0.4,
                "I am a smoker.",
                "I am not a smoker.",
            )],
            pi_y: None,
            assignment_mode: None,
            show_table: true,
            allow_download: false,
            storage: None,
        }
    }

    fn paired() -> SurveyRequest {
        SurveyRequest {
            id: Some("paired".into()),
            model: Model::SimmonsTwo,
            devices: vec![
                DeviceConfig::unrelated(0.8, "I have high fever.", "I was born on a Sunday."),
                DeviceConfig::unrelated(0.3, "I have high fever.", "I was born on a Sunday."),
            ],
            assignment_mode: Some(AssignmentMode::Paired),
            ..warner()
        }
    }

    #[test]
    fn create_writes_header() {
        let dir = TempDir::new().unwrap();
        let svc = service(&dir);
        let id = svc.create_survey(warner()).unwrap();
        assert_eq!(id, "smokers");
        let path = dir.path().join("smokers").join("data.csv");
        assert_eq!(fs::read_to_string(path).unwrap(), "resp\n");
        assert!(matches!(
            svc.create_survey(warner()),
            Err(ServiceError::DuplicateSurvey(_))
        ));
    }

    #[test]
    fn session_statements_come_from_device() {
        let dir = TempDir::new().unwrap();
        let svc = service(&dir);
        svc.create_survey(warner()).unwrap();
        for _ in 0..200 {
            let view = svc.open_session("smokers").unwrap();
            assert_eq!(view.statements.len(), 1);
            assert!(["I am a smoker.", "I am not a smoker."].contains(&view.statements[0].as_str()));
        }
        svc.create_survey(paired()).unwrap();
        assert_eq!(svc.open_session("paired").unwrap().statements.len(), 2);
        assert!(matches!(
            svc.open_session("missing"),
            Err(ServiceError::UnknownSurvey(_))
        ));
    }

    #[test]
    fn submit_happy_path_and_reuse() {
        let dir = TempDir::new().unwrap();
        let svc = service(&dir);
        svc.create_survey(warner()).unwrap();
        let view = svc.open_session("smokers").unwrap();
        svc.submit_response("smokers", &view.token, &["y".into()])
            .unwrap();
        assert!(matches!(
            svc.submit_response("smokers", &view.token, &["y".into()]),
            Err(ServiceError::InvalidToken(TokenError::Consumed))
        ));
        let table = svc.get_table("smokers", false).unwrap();
        assert_eq!(table.rows, vec![vec!["y".to_string()]]);
    }

    #[test]
    fn arity_and_token_values_checked_before_claim() {
        let dir = TempDir::new().unwrap();
        let svc = service(&dir);
        svc.create_survey(paired()).unwrap();
        let view = svc.open_session("paired").unwrap();
        assert!(matches!(
            svc.submit_response("paired", &view.token, &["y".into()]),
            Err(ServiceError::Validation(_))
        ));
        assert!(matches!(
            svc.submit_response("paired", &view.token, &["y".into(), "yes".into()]),
            Err(ServiceError::Validation(_))
        ));
        svc.submit_response("paired", &view.token, &["y".into(), "n".into()])
            .unwrap();
        let est = svc.get_estimate("paired", 0.95).unwrap();
        assert!(est.variance_approximate);
    }

    #[test]
    fn flags_gate_table_and_download() {
        let dir = TempDir::new().unwrap();
        let svc = service(&dir);
        let mut req = warner();
        req.show_table = false;
        svc.create_survey(req).unwrap();
        assert!(matches!(
            svc.get_table("smokers", false),
            Err(ServiceError::Forbidden(_))
        ));
        assert!(svc.get_table("smokers", true).unwrap().rows.is_empty());
        assert!(matches!(
            svc.get_csv("smokers", false),
            Err(ServiceError::Forbidden(_))
        ));
        let svc = svc.with_clock(Arc::new(|| NaiveDate::from_ymd_opt(2024, 1, 31).unwrap()));
        let (name, bytes) = svc.get_csv("smokers", true).unwrap();
        assert_eq!(name, "mydata-2024-01-31.csv");
        assert_eq!(bytes, b"resp\n");
    }

    #[test]
    fn estimate_needs_data() {
        let dir = TempDir::new().unwrap();
        let svc = service(&dir);
        svc.create_survey(warner()).unwrap();
        assert!(matches!(
            svc.get_estimate("smokers", 0.95),
            Err(ServiceError::EmptyDataset(_))
        ));
    }

    #[test]
    fn split_assignment_is_fair() {
        let dir = TempDir::new().unwrap();
        let svc = service(&dir);
        let mut req = paired();
        req.assignment_mode = Some(AssignmentMode::Split);
        req.devices = vec![
            DeviceConfig::unrelated(0.8, "S one", "Y one"),
            DeviceConfig::unrelated(0.3, "S two", "Y two"),
        ];
        svc.create_survey(req).unwrap();
        let n = 10_000;
        let mut device_one = 0;
        for _ in 0..n {
            let view = svc.open_session("paired").unwrap();
            assert_eq!(view.statements.len(), 1);
            if view.statements[0].ends_with("one") {
                device_one += 1;
            }
        }
        let freq = device_one as f64 / n as f64;
        assert!((freq - 0.5).abs() <= 0.02, "{freq}");
    }

    #[test]
    fn admin_check() {
        let dir = TempDir::new().unwrap();
        let svc = service(&dir);
        assert!(svc.is_admin(Some("admin")));
        assert!(!svc.is_admin(Some("admin2")));
        assert!(!svc.is_admin(None));
    }
}
