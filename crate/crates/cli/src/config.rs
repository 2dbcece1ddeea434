//! Config file.
//!
//! TOML, with an optional `[server]` table and one `[models.<name>]` table
//! per endpoint:
//!
//! ```toml
//! [server]
//! port = 8080
//! store_dir = "transcripts"
//!
//! [models.gpt4]
//! type = "http"
//! base_url = "https://api.openai.com/v1"
//! model = "gpt-4"
//! api_key_env = "OPENAI_API_KEY"
//! temperature = 0.0
//!
//! [models.recorded]
//! type = "fixture"
//! dir = "fixtures/replies"
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use blockwork_core::gateway::{ModelEndpoint, ModelSpec};
use blockwork_server::ServerConfig;
use clap::Args;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub server: ServerConfig,
    #[serde(default)]
    pub models: BTreeMap<String, ModelSpec>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.server.target_library.as_mut() {
            fix(p);
        }
        if let Some(p) = self.server.store_dir.as_mut() {
            fix(p);
        }
        for spec in self.models.values_mut() {
            if let ModelSpec::Fixture { dir } = spec {
                fix(dir);
            }
        }
    }

    /// The named entry with `overrides` applied. A name missing from the
    /// table becomes an ad-hoc HTTP endpoint when the overrides supply both
    /// a base URL and a model id.
    pub fn model(&self, name: &str, overrides: &ModelOverrides) -> Result<ModelSpec, CliError> {
        let spec = match self.models.get(name) {
            Some(spec) => spec.clone(),
            None => match (&overrides.base_url, &overrides.model_id) {
                (Some(url), Some(id)) => ModelSpec::Http(ModelEndpoint::new(url.clone(), id.clone())),
                _ => {
                    return Err(CliError::Usage(format!(
                        "model {name} is not in the config; pass --config or --base-url and --model-id"
                    )))
                }
            },
        };
        overrides.apply(spec)
    }
}

/// Per-field overrides for an HTTP endpoint entry.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelOverrides {
    #[arg(long)]
    pub base_url: Option<String>,
    /// Model identifier sent to the endpoint.
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub timeout_secs: Option<f64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
}

impl ModelOverrides {
    fn is_empty(&self) -> bool {
        self.base_url.is_none()
            && self.model_id.is_none()
            && self.api_key_env.is_none()
            && self.temperature.is_none()
            && self.timeout_secs.is_none()
            && self.max_retries.is_none()
    }

    pub fn apply(&self, spec: ModelSpec) -> Result<ModelSpec, CliError> {
        match spec {
            ModelSpec::Http(mut ep) => {
                if let Some(v) = &self.base_url {
                    ep.base_url = v.clone();
                }
                if let Some(v) = &self.model_id {
                    ep.model = v.clone();
                }
                if let Some(v) = &self.api_key_env {
                    ep.api_key_env = Some(v.clone());
                }
                if let Some(v) = self.temperature {
                    ep.temperature = Some(v);
                }
                if let Some(v) = self.timeout_secs {
                    ep.timeout_secs = v;
                }
                if let Some(v) = self.max_retries {
                    ep.max_retries = v;
                }
                ep.validate().map_err(|e| CliError::Usage(e.to_string()))?;
                Ok(ModelSpec::Http(ep))
            }
            other if self.is_empty() => Ok(other),
            _ => Err(CliError::Usage("endpoint overrides apply only to http models".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[server]
port = 9000
store_dir = "store"

[models.gpt4]
type = "http"
base_url = "https://api.example.com/v1"
model = "gpt-4"
api_key_env = "OPENAI_API_KEY"

[models.recorded]
type = "fixture"
dir = "replies"
"#;

    #[test]
    fn loads_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blockwork.toml");
        fs::write(&path, SAMPLE).unwrap();
        let config = FileConfig::load(Some(&path)).unwrap();
        assert_eq!(config.server.port, 9000);
        assert_eq!(config.server.host, "127.0.0.1");
        assert_eq!(config.server.store_dir, Some(dir.path().join("store")));
        match &config.models["recorded"] {
            ModelSpec::Fixture { dir: d } => assert_eq!(d, &dir.path().join("replies")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_replace_single_fields() {
        let config: FileConfig = toml::from_str(SAMPLE).unwrap();
        let overrides = ModelOverrides {
            temperature: Some(0.7),
            ..Default::default()
        };
        match config.model("gpt4", &overrides).unwrap() {
            ModelSpec::Http(ep) => {
                assert_eq!(ep.temperature, Some(0.7));
                assert_eq!(ep.model, "gpt-4");
                assert_eq!(ep.api_key_env.as_deref(), Some("OPENAI_API_KEY"));
            }
            other => panic!("{other:?}"),
        }
        assert!(config.model("recorded", &overrides).is_err());
        assert!(config.model("recorded", &ModelOverrides::default()).is_ok());
    }

    #[test]
    fn ad_hoc_endpoint_from_flags() {
        let config = FileConfig::default();
        assert!(matches!(config.model("x", &ModelOverrides::default()), Err(CliError::Usage(_))));
        let overrides = ModelOverrides {
            base_url: Some("http://localhost:8000/v1".into()),
            model_id: Some("llama".into()),
            ..Default::default()
        };
        assert!(matches!(config.model("x", &overrides).unwrap(), ModelSpec::Http(_)));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[serve]\nport = 1\n").is_err());
    }
}
