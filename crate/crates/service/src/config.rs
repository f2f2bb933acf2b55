//! Survey definitions as submitted by an administrator (JSON over HTTP or a
//! `[[survey]]` table in the service config file) and their validated form.

use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use veilpoll_core::device::{
    self, DeviceKind, DeviceSpec, Probability, Statement, StatementRole, ValidatedDevice,
    PROBABILITY_TOLERANCE,
};
use veilpoll_core::store::RemoteBackendConfig;
use veilpoll_core::{AssignmentMode, Design, Model, StoreSchema};

use crate::error::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeConfig {
    pub text: String,
    pub probability: f64,
}

/// One randomization device.
///
/// Two-outcome devices take `p` and two texts; any kind may instead list its
/// `outcomes` explicitly (sensitive statement first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub kind: DeviceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitive: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complement: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unrelated: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcomes: Option<Vec<OutcomeConfig>>,
}

impl DeviceConfig {
    pub fn warner(p: f64, sensitive: &str, complement: &str) -> Self {
        DeviceConfig {
            kind: DeviceKind::Warner,
            p: Some(p),
            sensitive: Some(sensitive.into()),
            complement: Some(complement.into()),
            unrelated: None,
            outcomes: None,
        }
    }

    pub fn unrelated(p: f64, sensitive: &str, unrelated: &str) -> Self {
        DeviceConfig {
            kind: DeviceKind::UnrelatedQuestion,
            p: Some(p),
            sensitive: Some(sensitive.into()),
            complement: None,
            unrelated: Some(unrelated.into()),
            outcomes: None,
        }
    }

    pub fn to_spec(&self) -> Result<DeviceSpec, ServiceError> {
        let invalid = |msg: &str| ServiceError::Validation(msg.to_string());
        if let Some(outcomes) = &self.outcomes {
            if self.p.is_some() || self.sensitive.is_some() {
                return Err(invalid("give either outcomes or p with texts, not both"));
            }
            let roles: Vec<StatementRole> = match self.kind {
                DeviceKind::Warner => vec![StatementRole::Sensitive, StatementRole::Complement],
                DeviceKind::UnrelatedQuestion => {
                    vec![StatementRole::Sensitive, StatementRole::Unrelated]
                }
                DeviceKind::Generic => vec![StatementRole::Other; outcomes.len()],
            };
            if roles.len() != outcomes.len() {
                return Err(invalid("two-outcome device needs exactly two outcomes"));
            }
            let outcomes = outcomes
                .iter()
                .zip(roles)
                .map(|(o, role)| {
                    Ok((
                        Statement::new(o.text.clone(), role),
                        Probability::new(o.probability)?,
                    ))
                })
                .collect::<Result<Vec<_>, device::DeviceError>>()?;
            return Ok(DeviceSpec {
                kind: self.kind,
                outcomes,
            });
        }

        let p = Probability::new(self.p.ok_or_else(|| invalid("device needs p"))?)?;
        let sensitive = self
            .sensitive
            .as_deref()
            .ok_or_else(|| invalid("device needs a sensitive statement"))?;
        let spec = match self.kind {
            DeviceKind::Warner => {
                let complement = self
                    .complement
                    .as_deref()
                    .ok_or_else(|| invalid("warner device needs a complement statement"))?;
                device::make_warner(p, sensitive, complement)?
            }
            DeviceKind::UnrelatedQuestion => {
                let unrelated = self.unrelated.as_deref().ok_or_else(|| {
                    invalid("unrelated_question device needs an unrelated statement")
                })?;
                device::make_unrelated(p, sensitive, unrelated)?
            }
            DeviceKind::Generic => return Err(invalid("generic devices must list outcomes")),
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum StorageRequest {
    /// CSV file inside the service data directory.
    Local {
        #[serde(default)]
        path: Option<PathBuf>,
    },
    Remote {
        sheet_key: String,
        #[serde(default)]
        token_path: Option<PathBuf>,
        #[serde(default)]
        retry_limit: Option<u32>,
        #[serde(default)]
        backoff_ms: Option<u64>,
    },
}

fn default_true() -> bool {
    true
}

/// An unvalidated survey definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyRequest {
    #[serde(default)]
    pub id: Option<String>,
    pub title: String,
    #[serde(default)]
    pub instructions: String,
    #[serde(default)]
    pub privacy_notice: String,
    pub model: Model,
    #[serde(alias = "device")]
    pub devices: Vec<DeviceConfig>,
    #[serde(default)]
    pub pi_y: Option<f64>,
    #[serde(default)]
    pub assignment_mode: Option<AssignmentMode>,
    #[serde(default = "default_true")]
    pub show_table: bool,
    #[serde(default)]
    pub allow_download: bool,
    #[serde(default)]
    pub storage: Option<StorageRequest>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StorageConfig {
    Local(PathBuf),
    Remote(RemoteBackendConfig),
}

/// A survey that passed validation.
#[derive(Debug, Clone)]
pub struct SurveyConfig {
    pub id: String,
    pub title: String,
    pub instructions: String,
    pub privacy_notice: String,
    pub model: Model,
    pub devices: Vec<ValidatedDevice>,
    pub pi_y: Option<f64>,
    pub assignment_mode: Option<AssignmentMode>,
    pub show_table: bool,
    pub allow_download: bool,
    pub storage: StorageConfig,
}

impl SurveyConfig {
    pub fn design(&self) -> Design {
        match self.model {
            Model::Warner => Design::Warner {
                p: self.devices[0].p(),
            },
            Model::SimmonsKnown => Design::SimmonsKnown {
                p: self.devices[0].p(),
                pi_y: self.pi_y.expect("validated"),
            },
            Model::SimmonsTwo => Design::SimmonsTwo {
                p1: self.devices[0].p(),
                p2: self.devices[1].p(),
            },
        }
    }

    pub fn schema(&self) -> StoreSchema {
        match self.assignment_mode {
            None => StoreSchema::Single,
            Some(AssignmentMode::Paired) => StoreSchema::Paired,
            Some(AssignmentMode::Split) => StoreSchema::Split,
        }
    }

    /// Statements a respondent of this survey could ever be shown.
    pub fn statement_texts(&self) -> impl Iterator<Item = &str> {
        self.devices
            .iter()
            .flat_map(|d| d.statements().map(|s| s.text.as_str()))
    }
}

pub fn valid_survey_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Where stores live unless a survey says otherwise.
#[derive(Debug, Clone)]
pub struct StorageDefaults {
    pub data_dir: PathBuf,
    pub remote_token_path: PathBuf,
}

impl SurveyRequest {
    /// Validates the request; `id` is used when the request carries none.
    pub fn validate(
        self,
        id: String,
        defaults: &StorageDefaults,
    ) -> Result<SurveyConfig, ServiceError> {
        let invalid = |msg: String| ServiceError::Validation(msg);
        let id = match self.id {
            Some(given) => given,
            None => id,
        };
        if !valid_survey_id(&id) {
            return Err(invalid(format!(
                "survey id {id:?} must be 1-64 characters of [A-Za-z0-9_-]"
            )));
        }
        if self.title.trim().is_empty() {
            return Err(invalid("title is empty".into()));
        }

        let (expected_kind, expected_devices) = match self.model {
            Model::Warner => (DeviceKind::Warner, 1),
            Model::SimmonsKnown => (DeviceKind::UnrelatedQuestion, 1),
            Model::SimmonsTwo => (DeviceKind::UnrelatedQuestion, 2),
        };
        if self.devices.len() != expected_devices {
            return Err(invalid(format!(
                "{} surveys need {expected_devices} device(s), got {}",
                self.model.name(),
                self.devices.len()
            )));
        }
        let devices = self
            .devices
            .iter()
            .map(|d| {
                if d.kind != expected_kind {
                    return Err(invalid(format!(
                        "{} surveys need {expected_kind:?} devices, got {:?}",
                        self.model.name(),
                        d.kind
                    )));
                }
                Ok(device::validate_device(d.to_spec()?)?)
            })
            .collect::<Result<Vec<_>, ServiceError>>()?;

        let pi_y = match (self.model, self.pi_y) {
            (Model::SimmonsKnown, None) => {
                return Err(invalid("simmons_known surveys need pi_y".into()));
            }
            (Model::SimmonsKnown, Some(v)) if !(0.0..=1.0).contains(&v) => {
                return Err(invalid(format!("pi_y = {v} outside [0, 1]")));
            }
            (Model::SimmonsKnown, Some(v)) => Some(v),
            (_, Some(_)) => {
                return Err(invalid("pi_y only applies to simmons_known surveys".into()));
            }
            (_, None) => None,
        };

        let assignment_mode = match (self.model, self.assignment_mode) {
            (Model::SimmonsTwo, mode) => {
                let gap = (devices[0].p() - devices[1].p()).abs();
                if gap < PROBABILITY_TOLERANCE {
                    return Err(ServiceError::DegenerateDesign(
                        "two-device design requires p1 != p2".into(),
                    ));
                }
                Some(mode.unwrap_or_default())
            }
            (_, Some(_)) => {
                return Err(invalid(
                    "assignment_mode only applies to simmons_two surveys".into(),
                ));
            }
            (_, None) => None,
        };

        let storage = match self.storage.unwrap_or(StorageRequest::Local { path: None }) {
            StorageRequest::Local { path } => {
                let relative = match path {
                    Some(p) => {
                        if !is_contained(&p) {
                            return Err(invalid(format!(
                                "storage path {} must be relative to the data directory",
                                p.display()
                            )));
                        }
                        p
                    }
                    None => Path::new(&id).join("data.csv"),
                };
                StorageConfig::Local(defaults.data_dir.join(relative))
            }
            StorageRequest::Remote {
                sheet_key,
                token_path,
                retry_limit,
                backoff_ms,
            } => {
                let mut remote = RemoteBackendConfig::new(
                    sheet_key,
                    token_path.unwrap_or_else(|| defaults.remote_token_path.clone()),
                );
                if let Some(limit) = retry_limit {
                    remote.retry_limit = limit;
                }
                if let Some(ms) = backoff_ms {
                    remote.backoff_ms = ms;
                }
                remote.validate()?;
                StorageConfig::Remote(remote)
            }
        };

        Ok(SurveyConfig {
            id,
            title: self.title,
            instructions: self.instructions,
            privacy_notice: self.privacy_notice,
            model: self.model,
            devices,
            pi_y,
            assignment_mode,
            show_table: self.show_table,
            allow_download: self.allow_download,
            storage,
        })
    }
}

fn is_contained(path: &Path) -> bool {
    path.components().all(|c| matches!(c, Component::Normal(_)))
        && path.components().next().is_some()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> StorageDefaults {
        StorageDefaults {
            data_dir: PathBuf::from("/srv/data"),
            remote_token_path: PathBuf::from("/srv/.secrets/token"),
        }
    }

    fn smoker() -> SurveyRequest {
        SurveyRequest {
            id: None,
            title: "Smokers".into(),
            instructions: String::new(),
            privacy_notice: String::new(),
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

    #[test]
    fn warner_request_validates() {
        let config = smoker().validate("abc".into(), &defaults()).unwrap();
        assert_eq!(config.schema(), StoreSchema::Single);
        assert_eq!(config.design(), Design::Warner { p: 0.4 });
        assert_eq!(
            config.storage,
            StorageConfig::Local(PathBuf::from("/srv/data/abc/data.csv"))
        );
    }

    #[test]
    fn warner_half_is_degenerate() {
        let mut req = smoker();
        req.devices[0].p = Some(0.5);
        assert!(matches!(
            req.validate("a".into(), &defaults()),
            Err(ServiceError::DegenerateDesign(_))
        ));
    }

    #[test]
    fn two_device_rules() {
        let mut req = smoker();
        req.model = Model::SimmonsTwo;
        req.devices = vec![
            DeviceConfig::unrelated(0.4, "S", "Y"),
            DeviceConfig::unrelated(0.4, "S", "Y"),
        ];
        assert!(matches!(
            req.clone().validate("a".into(), &defaults()),
            Err(ServiceError::DegenerateDesign(_))
        ));
        req.devices[1].p = Some(0.7);
        let config = req.validate("a".into(), &defaults()).unwrap();
        assert_eq!(config.schema(), StoreSchema::Paired);
    }

    #[test]
    fn simmons_known_needs_pi_y() {
        let mut req = smoker();
        req.model = Model::SimmonsKnown;
        req.devices = vec![DeviceConfig::unrelated(
            0.4,
            "I have high fever.",
            "I was born on a Sunday.",
        )];
        assert!(matches!(
            req.clone().validate("a".into(), &defaults()),
            Err(ServiceError::Validation(_))
        ));
        req.pi_y = Some(1.0 / 7.0);
        assert!(req.validate("a".into(), &defaults()).is_ok());
    }

    #[test]
    fn kind_must_match_model() {
        let mut req = smoker();
        req.devices = vec![DeviceConfig::unrelated(0.4, "S", "Y")];
        assert!(matches!(
            req.validate("a".into(), &defaults()),
            Err(ServiceError::Validation(_))
        ));
    }

    #[test]
    fn explicit_outcomes_accepted() {
        let mut req = smoker();
        req.devices = vec![DeviceConfig {
            kind: DeviceKind::Warner,
            p: None,
            sensitive: None,
            complement: None,
            unrelated: None,
            outcomes: Some(vec![
                OutcomeConfig {
                    text: "I am a smoker.".into(),
                    probability: 0.4,
                },
                OutcomeConfig {
                    text: "I am not a smoker.".into(),
                    probability: 0.6,
                },
            ]),
        }];
        let config = req.validate("a".into(), &defaults()).unwrap();
        assert_eq!(config.devices[0].p(), 0.4);
    }

    #[test]
    fn storage_paths_stay_inside_data_dir() {
        for bad in ["../escape.csv", "/etc/passwd", ""] {
            let mut req = smoker();
            req.storage = Some(StorageRequest::Local {
                path: Some(PathBuf::from(bad)),
            });
            assert!(req.validate("a".into(), &defaults()).is_err(), "{bad}");
        }
        let mut req = smoker();
        req.storage = Some(StorageRequest::Remote {
            sheet_key: "XXX".into(),
            token_path: None,
            retry_limit: None,
            backoff_ms: None,
        });
        match req.validate("a".into(), &defaults()).unwrap().storage {
            StorageConfig::Remote(r) => {
                assert_eq!(r.token_path, PathBuf::from("/srv/.secrets/token"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ids_are_restricted() {
        assert!(valid_survey_id("smokers-2024_a"));
        assert!(!valid_survey_id("../x"));
        assert!(!valid_survey_id(""));
        let mut req = smoker();
        req.id = Some("a/b".into());
        assert!(req.validate("x".into(), &defaults()).is_err());
    }

    #[test]
    fn json_request_parses() {
        let req: SurveyRequest = serde_json::from_str(
            r#"{"title":"T","model":"simmons_two","assignment_mode":"split",
                "devices":[{"kind":"unrelated_question","p":0.8,"sensitive":"S","unrelated":"Y"},
                           {"kind":"unrelated_question","p":0.3,"sensitive":"S","unrelated":"Y"}]}"#,
        )
        .unwrap();
        let config = req.validate("id".into(), &defaults()).unwrap();
        assert_eq!(config.schema(), StoreSchema::Split);
        assert!(config.show_table);
        assert!(!config.allow_download);
    }
}
