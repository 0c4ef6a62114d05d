//! Service configuration: a TOML file, then `HUDDLE_*` environment overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use huddle_core::SeasonClock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error("invalid value {value:?} for {key}")]
    BadOverride { key: String, value: String },
    #[error("generator = \"external\" needs external_url")]
    MissingExternalUrl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Template,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub state_dir: PathBuf,
    pub fixtures_dir: PathBuf,
    pub clock: SeasonClock,
    pub media_base_url: String,
    pub generator: GeneratorKind,
    pub external_url: Option<String>,
    /// Per-node budget in milliseconds.
    pub timeout_ms: u64,
    pub parallel: bool,
    /// Team that "our" and "we" refer to.
    pub home_team: Option<String>,
    /// Correlations kept by the trace store.
    pub trace_retention: usize,
    pub bind: String,
    /// Latency histogram bucket width, seconds.
    pub bucket_width: f64,
    /// Latency histogram overflow threshold, seconds.
    pub latency_cap: f64,
    pub thumbs_down_weight: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            state_dir: PathBuf::from("state"),
            fixtures_dir: PathBuf::from("fixtures"),
            clock: SeasonClock { season: 2024, week: 10 },
            media_base_url: "http://localhost:8080/media".into(),
            generator: GeneratorKind::Template,
            external_url: None,
            timeout_ms: 10_000,
            parallel: true,
            home_team: Some("t_min".into()),
            trace_retention: 1000,
            bind: "127.0.0.1:8080".into(),
            bucket_width: 2.5,
            latency_cap: huddle_core::eval::DEFAULT_LATENCY_CAP,
            thumbs_down_weight: huddle_core::eval::DEFAULT_THUMBS_DOWN_WEIGHT,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadOverride { key: key.into(), value: value.into() })
}

impl Config {
    /// Reads `path` if given, then applies overrides from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Config, ConfigError> {
        let base = match path {
            Some(p) => Config::from_file(p)?,
            None => Config::default(),
        };
        base.with_overrides(std::env::vars())
    }

    pub fn from_file(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        toml::from_str(&text).map_err(|source| ConfigError::Toml { path: path.into(), source })
    }

    /// Applies `HUDDLE_*` variables; anything else is ignored.
    pub fn with_overrides<I>(mut self, vars: I) -> Result<Config, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        for (key, value) in vars {
            match key.as_str() {
                "HUDDLE_STATE_DIR" => self.state_dir = value.into(),
                "HUDDLE_FIXTURES_DIR" => self.fixtures_dir = value.into(),
                "HUDDLE_SEASON" => self.clock.season = parse(&key, &value)?,
                "HUDDLE_WEEK" => self.clock.week = parse(&key, &value)?,
                "HUDDLE_MEDIA_BASE_URL" => self.media_base_url = value,
                "HUDDLE_GENERATOR" => {
                    self.generator = match value.as_str() {
                        "template" => GeneratorKind::Template,
                        "external" => GeneratorKind::External,
                        _ => return Err(ConfigError::BadOverride { key, value }),
                    }
                }
                "HUDDLE_EXTERNAL_URL" => self.external_url = Some(value),
                "HUDDLE_TIMEOUT_MS" => self.timeout_ms = parse(&key, &value)?,
                "HUDDLE_PARALLEL" => {
                    self.parallel = match value.as_str() {
                        "1" | "true" | "on" => true,
                        "0" | "false" | "off" => false,
                        _ => return Err(ConfigError::BadOverride { key, value }),
                    }
                }
                "HUDDLE_HOME_TEAM" => self.home_team = (!value.is_empty()).then_some(value),
                "HUDDLE_TRACE_RETENTION" => self.trace_retention = parse(&key, &value)?,
                "HUDDLE_BIND" => self.bind = value,
                _ => {}
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.generator == GeneratorKind::External && self.external_url.is_none() {
            return Err(ConfigError::MissingExternalUrl);
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}
