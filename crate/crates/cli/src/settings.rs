//! Service configuration file.
//!
//! TOML, one key per line, `#` comments. `[service]` holds listener and
//! storage settings; each `[[survey]]` table is a survey registered at
//! startup, with its devices as `[[survey.device]]` tables:
//!
//! ```toml
//! [service]
//! port = 8080
//! data_dir = "data"            # relative to this file
//! admin_token = "change-me"
//! remote_token_path = ".secrets/token"
//! ticket_ttl_secs = 1800
//!
//! [[survey]]
//! id = "smokers"
//! title = "Warner RRT: proportion of smokers"
//! instructions = "If the statement is true for you, select Yes, else select No."
//! privacy_notice = "Your response is completely anonymous. Only your Yes/No response is stored."
//! model = "warner"
//! show_table = true
//! allow_download = false
//!
//! [[survey.device]]
//! kind = "warner"
//! p = 0.4
//! sensitive = "I am a smoker."
//! complement = "I am not a smoker."
//! ```
//!
//! Environment variables override the file: `VEILPOLL_PORT`,
//! `VEILPOLL_DATA_DIR`, `VEILPOLL_ADMIN_TOKEN`, `VEILPOLL_REMOTE_TOKEN_PATH`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use veilpoll_service::{ServiceSettings, SurveyRequest, DEFAULT_TICKET_TTL};

use crate::CliError;

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServiceSection {
    port: Option<u16>,
    data_dir: Option<PathBuf>,
    admin_token: Option<String>,
    remote_token_path: Option<PathBuf>,
    ticket_ttl_secs: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    service: ServiceSection,
    #[serde(default)]
    survey: Vec<SurveyRequest>,
}

#[derive(Debug)]
pub struct ServeConfig {
    pub port: u16,
    pub settings: ServiceSettings,
    pub surveys: Vec<SurveyRequest>,
}

/// Command-line overrides, applied last.
#[derive(Debug, Default)]
pub struct Overrides {
    pub port: Option<u16>,
    pub data_dir: Option<PathBuf>,
}

pub fn load(
    path: Option<&Path>,
    env: impl Fn(&str) -> Option<String>,
    overrides: Overrides,
) -> Result<ServeConfig, CliError> {
    let (file, base) = match path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
            let file: ConfigFile = toml::from_str(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            let base = path
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."));
            (file, base)
        }
        None => (ConfigFile::default(), PathBuf::from(".")),
    };
    let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
    let service = file.service;

    let port = match env("VEILPOLL_PORT") {
        Some(v) => Some(
            v.parse::<u16>()
                .map_err(|_| CliError::Validation(format!("VEILPOLL_PORT={v:?} is not a port")))?,
        ),
        None => service.port,
    };
    let port = overrides.port.or(port).unwrap_or(DEFAULT_PORT);

    let data_dir = overrides
        .data_dir
        .or_else(|| env("VEILPOLL_DATA_DIR").map(PathBuf::from))
        .or_else(|| service.data_dir.map(resolve))
        .unwrap_or_else(|| base.join("data"));

    let admin_token = env("VEILPOLL_ADMIN_TOKEN")
        .or(service.admin_token)
        .filter(|t| !t.trim().is_empty())
        .ok_or_else(|| {
            CliError::Validation(
                "an admin token is required (admin_token in [service] or VEILPOLL_ADMIN_TOKEN)"
                    .into(),
            )
        })?;

    let remote_token_path = env("VEILPOLL_REMOTE_TOKEN_PATH")
        .map(PathBuf::from)
        .or_else(|| service.remote_token_path.map(resolve))
        .unwrap_or_else(|| base.join(".secrets").join("token"));

    let mut settings = ServiceSettings::new(admin_token, data_dir);
    settings.remote_token_path = remote_token_path;
    settings.ticket_ttl = service
        .ticket_ttl_secs
        .map(Duration::from_secs)
        .unwrap_or(DEFAULT_TICKET_TTL);

    Ok(ServeConfig {
        port,
        settings,
        surveys: file.survey,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;
    use tempfile::TempDir;
    use veilpoll_core::Model;

    const SAMPLE: &str = r#"
# reference survey
[service]
port = 9000
data_dir = "store"
admin_token = "file-token"

[[survey]]
id = "smokers"
title = "Warner RRT"
model = "warner"

[[survey.device]]
kind = "warner"
p = 0.4
sensitive = "I am a smoker."
complement = "I am not a smoker."

[[survey]]
id = "fever"
title = "Simmons RRT"
model = "simmons_known"
pi_y = 0.142857142857

[[survey.device]]
kind = "unrelated_question"
outcomes = [
  { text = "I have high fever.", probability = 0.4 },
  { text = "I was born on a Sunday.", probability = 0.6 },
]
"#;

    fn write_sample(dir: &TempDir) -> PathBuf {
        let path = dir.path().join("veilpoll.toml");
        fs::write(&path, SAMPLE).unwrap();
        path
    }

    #[test]
    fn file_values_resolve_relative_to_file() {
        let dir = TempDir::new().unwrap();
        let path = write_sample(&dir);
        let config = load(Some(&path), |_| None, Overrides::default()).unwrap();
        assert_eq!(config.port, 9000);
        assert_eq!(config.settings.data_dir, dir.path().join("store"));
        assert_eq!(config.settings.admin_token, "file-token");
        assert_eq!(
            config.settings.remote_token_path,
            dir.path().join(".secrets").join("token")
        );
        assert_eq!(config.surveys.len(), 2);
        assert_eq!(config.surveys[1].model, Model::SimmonsKnown);
    }

    #[test]
    fn env_then_flags_override() {
        let dir = TempDir::new().unwrap();
        let path = write_sample(&dir);
        let env: HashMap<&str, &str> = [
            ("VEILPOLL_PORT", "7000"),
            ("VEILPOLL_DATA_DIR", "/var/veilpoll"),
            ("VEILPOLL_ADMIN_TOKEN", "env-token"),
            ("VEILPOLL_REMOTE_TOKEN_PATH", "/run/secret"),
        ]
        .into_iter()
        .collect();
        let lookup = |k: &str| env.get(k).map(|v| v.to_string());
        let config = load(Some(&path), lookup, Overrides::default()).unwrap();
        assert_eq!(config.port, 7000);
        assert_eq!(config.settings.data_dir, PathBuf::from("/var/veilpoll"));
        assert_eq!(config.settings.admin_token, "env-token");
        assert_eq!(
            config.settings.remote_token_path,
            PathBuf::from("/run/secret")
        );

        let config = load(
            Some(&path),
            lookup,
            Overrides {
                port: Some(1234),
                data_dir: Some("/tmp/x".into()),
            },
        )
        .unwrap();
        assert_eq!(config.port, 1234);
        assert_eq!(config.settings.data_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn admin_token_required() {
        assert!(matches!(
            load(None, |_| None, Overrides::default()),
            Err(CliError::Validation(_))
        ));
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bad.toml");
        fs::write(&path, "[service]\nprot = 1\n").unwrap();
        assert!(matches!(
            load(Some(&path), |_| None, Overrides::default()),
            Err(CliError::Validation(_))
        ));
    }
}
