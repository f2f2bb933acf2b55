#![allow(dead_code)]

use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, HeaderMap, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;
use veilpoll_service::{router, ServiceSettings, SurveyService};

pub const ADMIN: &str = "acceptance-admin";

pub struct Harness {
    pub service: Arc<SurveyService>,
    pub app: Router,
    pub dir: TempDir,
}

impl Harness {
    pub fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let settings = ServiceSettings::new(ADMIN, dir.path().join("data"));
        let service = Arc::new(SurveyService::new(settings));
        Harness {
            app: router(service.clone()),
            service,
            dir,
        }
    }

    pub fn data_dir(&self) -> std::path::PathBuf {
        self.dir.path().join("data")
    }
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or(Value::Null)
    }
}

pub async fn send(
    app: &Router,
    method: &str,
    uri: &str,
    admin: bool,
    body: Option<Value>,
) -> Reply {
    let mut builder = Request::builder().method(method).uri(uri);
    if admin {
        builder = builder.header(header::AUTHORIZATION, format!("Bearer {ADMIN}"));
    }
    let request = match body {
        Some(v) => builder
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(v.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let headers = response.headers().clone();
    let body = response
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    Reply {
        status,
        headers,
        body,
    }
}

pub async fn open_session(app: &Router, id: &str) -> Value {
    let r = send(app, "GET", &format!("/surveys/{id}/session"), false, None).await;
    assert_eq!(r.status, StatusCode::OK, "session for {id}");
    r.json()
}

pub async fn submit(app: &Router, id: &str, token: &str, answers: &[&str]) -> Reply {
    send(
        app,
        "POST",
        &format!("/surveys/{id}/responses"),
        false,
        Some(json!({"token": token, "answers": answers})),
    )
    .await
}

pub fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .unwrap()
}

pub const SMOKER: &str = "I am a smoker.";
pub const NON_SMOKER: &str = "I am not a smoker.";
pub const FEVER: &str = "I have high fever.";
pub const SUNDAY: &str = "I was born on a Sunday.";
pub const CHEATED: &str = "I cheated on an exam.";
pub const LEFTY: &str = "I am left handed.";

pub fn warner_survey(id: &str, p: f64) -> Value {
    json!({
        "id": id,
        "title": "Warner RRT: proportion of smokers",
        "instructions": "If the statement is true for you, select Yes, else select No.",
        "privacy_notice": "Your response is completely anonymous. Only your Yes/No response is stored.",
        "model": "warner",
        "allow_download": true,
        "devices": [{"kind": "warner", "p": p, "sensitive": SMOKER, "complement": NON_SMOKER}]
    })
}

pub fn simmons_known_survey(id: &str, p: f64, pi_y: f64) -> Value {
    json!({
        "id": id,
        "title": "Simmons RRT",
        "model": "simmons_known",
        "pi_y": pi_y,
        "allow_download": true,
        "devices": [{"kind": "unrelated_question", "p": p, "sensitive": FEVER, "unrelated": SUNDAY}]
    })
}

pub fn two_device_survey(id: &str, p1: f64, p2: f64, mode: &str) -> Value {
    json!({
        "id": id,
        "title": "Two-device RRT",
        "model": "simmons_two",
        "assignment_mode": mode,
        "allow_download": true,
        "devices": [
            {"kind": "unrelated_question", "p": p1, "sensitive": CHEATED, "unrelated": LEFTY},
            {"kind": "unrelated_question", "p": p2, "sensitive": CHEATED, "unrelated": LEFTY}
        ]
    })
}

pub struct CliOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn cli(args: &[&str]) -> CliOutput {
    cli_in(args, None)
}

pub fn cli_in(args: &[&str], cwd: Option<&Path>) -> CliOutput {
    let mut command = Command::new(env!("CARGO_BIN_EXE_veilpoll"));
    command.args(args);
    for key in [
        "VEILPOLL_PORT",
        "VEILPOLL_DATA_DIR",
        "VEILPOLL_ADMIN_TOKEN",
        "VEILPOLL_REMOTE_TOKEN_PATH",
    ] {
        command.env_remove(key);
    }
    if let Some(dir) = cwd {
        command.current_dir(dir);
    }
    let output = command.output().expect("run veilpoll");
    CliOutput {
        code: output.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&output.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
    }
}

/// Compares two JSON documents, allowing numbers to differ by `tol`.
pub fn json_close(a: &Value, b: &Value, tol: f64, path: &str) -> Result<(), String> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            if (x - y).abs() <= tol {
                Ok(())
            } else {
                Err(format!("{path}: {x} vs {y}"))
            }
        }
        (Value::Array(xs), Value::Array(ys)) => {
            if xs.len() != ys.len() {
                return Err(format!("{path}: length {} vs {}", xs.len(), ys.len()));
            }
            for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
                json_close(x, y, tol, &format!("{path}[{i}]"))?;
            }
            Ok(())
        }
        (Value::Object(xs), Value::Object(ys)) => {
            let mut keys: Vec<_> = xs.keys().chain(ys.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                match (xs.get(k), ys.get(k)) {
                    (Some(x), Some(y)) => json_close(x, y, tol, &format!("{path}.{k}"))?,
                    _ => return Err(format!("{path}.{k}: present on one side only")),
                }
            }
            Ok(())
        }
        _ if a == b => Ok(()),
        _ => Err(format!("{path}: {a} vs {b}")),
    }
}
