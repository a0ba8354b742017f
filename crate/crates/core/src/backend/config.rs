use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendSpec, HttpBackend, MockBackend, MockScript};

/// Run configuration, read from a TOML file:
///
/// ```toml
/// seed = 0
/// parallelism = 4
///
/// [[backends]]
/// name = "critic"
/// endpoint = "https://vlm.example.org/v1/chat"
/// auth_token_env = "CRITIC_TOKEN"
/// capability = "token_scores"
/// max_parallel = 8
/// timeout_secs = 30
/// retry = { max_attempts = 4, backoff_base_ms = 200 }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub paths: RunPaths,
    #[serde(default)]
    pub backends: Vec<BackendSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judgments: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_parallelism() -> usize {
    4
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            parallelism: default_parallelism(),
            paths: RunPaths::default(),
            backends: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn parse(raw: &str) -> Result<Self, BackendError> {
        let config: RunConfig =
            toml::from_str(raw).map_err(|e| BackendError::InvalidSpec(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| BackendError::InvalidSpec(format!("{}: {e}", path.display())))?;
        Self::parse(&raw)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.parallelism < 1 {
            return Err(BackendError::InvalidSpec("parallelism must be at least 1".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for b in &self.backends {
            b.validate()?;
            if !names.insert(b.name.as_str()) {
                return Err(BackendError::InvalidSpec(format!("duplicate backend `{}`", b.name)));
            }
        }
        Ok(())
    }

    pub fn backend(&self, name: &str) -> Result<&BackendSpec, BackendError> {
        self.backends.iter().find(|b| b.name == name).ok_or_else(|| {
            let known: Vec<&str> = self.backends.iter().map(|b| b.name.as_str()).collect();
            BackendError::InvalidSpec(format!("unknown backend `{name}` (configured: {})", known.join(", ")))
        })
    }
}

/// Instantiates a backend. `mock://<path>` endpoints load a script relative
/// to `base_dir`; everything else is treated as an HTTP endpoint.
pub fn build_backend(spec: &BackendSpec, base_dir: &Path) -> Result<Box<dyn Backend>, BackendError> {
    spec.validate()?;
    if let Some(script_path) = spec.endpoint.strip_prefix("mock://") {
        let path = base_dir.join(script_path);
        let script = MockScript::load(&path)?;
        return Ok(Box::new(MockBackend::with_spec(spec.clone(), script)));
    }
    if !(spec.endpoint.starts_with("http://") || spec.endpoint.starts_with("https://")) {
        return Err(BackendError::InvalidSpec(format!(
            "{}: endpoint must be http(s):// or mock://, got `{}`",
            spec.name, spec.endpoint
        )));
    }
    Ok(Box::new(HttpBackend::new(spec.clone())?))
}
