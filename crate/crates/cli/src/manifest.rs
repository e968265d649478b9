use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;

use crate::error::CliError;

/// Settings a command ran with, after defaults were filled in.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ResolvedSettings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon_cap: Option<f64>,
}

/// Record written next to the outputs of every run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub git_describe: &'static str,
    pub command: String,
    pub arguments: Vec<String>,
    pub instance_path: PathBuf,
    pub settings: ResolvedSettings,
    pub outputs: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
    pub exit_code: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, instance_path: &Path) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            git_describe: env!("PRODPLAN_GIT_DESCRIBE"),
            command: command.to_string(),
            arguments: std::env::args().skip(1).collect(),
            instance_path: instance_path.to_path_buf(),
            settings: ResolvedSettings::default(),
            outputs: Vec::new(),
            started_at: timestamp(),
            finished_at: String::new(),
            exit_code: 0,
            error: None,
        }
    }

    pub fn finish(&mut self, result: &Result<(), CliError>) {
        self.finished_at = timestamp();
        match result {
            Ok(()) => self.exit_code = 0,
            Err(e) => {
                self.exit_code = e.exit_code();
                self.error = Some(e.to_string());
            }
        }
    }

    pub fn write(&self, out: &Path) -> Result<(), CliError> {
        let path = out.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}
