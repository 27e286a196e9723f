use std::path::{Path, PathBuf};

use copilot_client::ClientConfig;
use copilot_core::evaluation::TriageConfig;
use copilot_core::PromptVariant;
use serde::{Deserialize, Serialize};

use crate::error::AppError;

pub const CONFIG_FILE: &str = "feedback.toml";

pub const ENV_CONFIG: &str = "FEEDBACK_CONFIG";
pub const ENV_DATABASE: &str = "FEEDBACK_DB";
pub const ENV_VARIANT: &str = "FEEDBACK_VARIANT";
pub const ENV_PARALLELISM: &str = "FEEDBACK_PARALLELISM";
pub const ENV_SEED: &str = "FEEDBACK_SEED";
pub const ENV_GREEN_MIN: &str = "FEEDBACK_GREEN_MIN";
pub const ENV_AMBER_MIN: &str = "FEEDBACK_AMBER_MIN";
pub const ENV_LISTEN: &str = "FEEDBACK_LISTEN";
pub const ENV_API_TOKEN: &str = "FEEDBACK_API_TOKEN";
pub const ENV_CAPABILITY_SECRET: &str = "FEEDBACK_CAPABILITY_SECRET";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: String,
    /// Bearer token for instructor routes; `None` leaves them open.
    #[serde(skip_serializing)]
    pub api_token: Option<String>,
    /// Key for student capability links; generated and stored in the
    /// database when unset.
    #[serde(skip_serializing)]
    pub capability_secret: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            listen: "127.0.0.1:8080".into(),
            api_token: None,
            capability_secret: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub database: PathBuf,
    pub variant: PromptVariant,
    pub parallelism: usize,
    /// Seeds the mock model and the pseudonym map.
    pub seed: u64,
    /// Use the deterministic offline model instead of the HTTP provider.
    pub mock: bool,
    /// Locate highlight passages with an extra model call.
    pub llm_highlighting: bool,
    pub triage: TriageConfig,
    pub model: ClientConfig,
    pub server: ServerConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            database: PathBuf::from("feedback.db"),
            variant: PromptVariant::Advanced,
            parallelism: 4,
            seed: 0,
            mock: false,
            llm_highlighting: false,
            triage: TriageConfig::default(),
            model: ClientConfig::default(),
            server: ServerConfig::default(),
        }
    }
}

/// Command-line values; `Some` wins over environment and file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub database: Option<PathBuf>,
    pub variant: Option<PromptVariant>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
    pub mock: Option<bool>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub green_min: Option<u8>,
    pub amber_min: Option<u8>,
    pub listen: Option<String>,
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, AppError> {
        toml::from_str(text).map_err(|e| AppError::Config(format!("{CONFIG_FILE}: {}", e.message())))
    }

    /// Builds the effective configuration: file, then environment, then
    /// overrides. With no explicit `file`, `feedback.toml` in the working
    /// directory is used if present.
    pub fn resolve(
        file: Option<&Path>,
        vars: impl Fn(&str) -> Option<String>,
        overrides: &ConfigOverrides,
    ) -> Result<Self, AppError> {
        let explicit = file
            .map(Path::to_path_buf)
            .or_else(|| vars(ENV_CONFIG).map(PathBuf::from));
        let mut cfg = match explicit {
            Some(path) => {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
                Self::from_toml(&text)?
            }
            None if Path::new(CONFIG_FILE).is_file() => {
                let text = std::fs::read_to_string(CONFIG_FILE)
                    .map_err(|e| AppError::Config(format!("cannot read {CONFIG_FILE}: {e}")))?;
                Self::from_toml(&text)?
            }
            None => AppConfig::default(),
        };
        cfg.apply_vars(&vars)?;
        cfg.apply_overrides(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_vars(&mut self, vars: impl Fn(&str) -> Option<String>) -> Result<(), AppError> {
        let get = |k: &str| vars(k).filter(|v| !v.is_empty());
        self.model.apply_vars(get);
        if let Some(v) = get(ENV_DATABASE) {
            self.database = PathBuf::from(v);
        }
        if let Some(v) = get(ENV_VARIANT) {
            self.variant = parse_env(ENV_VARIANT, &v)?;
        }
        if let Some(v) = get(ENV_PARALLELISM) {
            self.parallelism = parse_env(ENV_PARALLELISM, &v)?;
        }
        if let Some(v) = get(ENV_SEED) {
            self.seed = parse_env(ENV_SEED, &v)?;
        }
        if let Some(v) = get(ENV_GREEN_MIN) {
            self.triage.green_min = parse_env(ENV_GREEN_MIN, &v)?;
        }
        if let Some(v) = get(ENV_AMBER_MIN) {
            self.triage.amber_min = parse_env(ENV_AMBER_MIN, &v)?;
        }
        if let Some(v) = get(ENV_LISTEN) {
            self.server.listen = v;
        }
        if let Some(v) = get(ENV_API_TOKEN) {
            self.server.api_token = Some(v);
        }
        if let Some(v) = get(ENV_CAPABILITY_SECRET) {
            self.server.capability_secret = Some(v);
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, o: &ConfigOverrides) {
        if let Some(v) = &o.database {
            self.database = v.clone();
        }
        if let Some(v) = o.variant {
            self.variant = v;
        }
        if let Some(v) = o.parallelism {
            self.parallelism = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.mock {
            self.mock = v;
        }
        if let Some(v) = &o.base_url {
            self.model.base_url = v.clone();
        }
        if let Some(v) = &o.model {
            self.model.model = v.clone();
        }
        if let Some(v) = o.green_min {
            self.triage.green_min = v;
        }
        if let Some(v) = o.amber_min {
            self.triage.amber_min = v;
        }
        if let Some(v) = &o.listen {
            self.server.listen = v.clone();
        }
    }

    pub fn validate(&self) -> Result<(), AppError> {
        if self.parallelism == 0 {
            return Err(AppError::Config("parallelism must be at least 1".into()));
        }
        self.triage.validate().map_err(|e| AppError::Config(e.to_string()))?;
        if self.model.max_in_flight == 0 || self.model.max_attempts == 0 {
            return Err(AppError::Config(
                "model.max_in_flight and model.max_attempts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

fn parse_env<T: std::str::FromStr>(var: &str, value: &str) -> Result<T, AppError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| AppError::Config(format!("{var}={value:?}: {e}")))
}
