//! Flat TOML configuration with `CTXPLAIN_*` environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::Limits;
use crate::http_oracle::{HttpOracleConfig, DEFAULT_MAX_CONTEXT_CHARS, DEFAULT_TIMEOUT_SECS};

pub const ENV_PREFIX: &str = "CTXPLAIN_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bind: String,
    pub index_path: Option<PathBuf>,
    /// Embedded store file; in-memory when unset.
    pub store_path: Option<PathBuf>,
    /// Cap on concurrent remote oracle calls.
    pub concurrency: usize,
    pub oracle_url: Option<String>,
    pub oracle_model: String,
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    pub max_context_chars: usize,
    pub max_perturbations: u64,
    pub combination_k_limit: usize,
    pub permutation_k_limit: usize,
    pub top_k: usize,
}

impl Default for Config {
    fn default() -> Self {
        let limits = Limits::default();
        Config {
            bind: "127.0.0.1:8080".into(),
            index_path: None,
            store_path: None,
            concurrency: 4,
            oracle_url: None,
            oracle_model: "default".into(),
            api_key: None,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            max_context_chars: DEFAULT_MAX_CONTEXT_CHARS,
            max_perturbations: ctxplain_core::combination::DEFAULT_MAX_PERTURBATIONS,
            combination_k_limit: limits.combination_k,
            permutation_k_limit: limits.permutation_k,
            top_k: 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

const TEXT_FIELDS: [&str; 6] = ["bind", "index_path", "store_path", "oracle_url", "oracle_model", "api_key"];
const NUMBER_FIELDS: [&str; 7] = [
    "concurrency",
    "timeout_secs",
    "max_context_chars",
    "max_perturbations",
    "combination_k_limit",
    "permutation_k_limit",
    "top_k",
];

impl Config {
    /// Reads `path` (if any) and applies overrides from the process
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.display().to_string(),
                source,
            })?,
            None => String::new(),
        };
        Self::from_parts(&text, std::env::vars())
    }

    pub fn from_parts(toml_text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml_text.parse().map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
        for (name, value) in env {
            let Some(field) = name.strip_prefix(ENV_PREFIX) else { continue };
            let field = field.to_ascii_lowercase();
            if TEXT_FIELDS.contains(&field.as_str()) {
                table.insert(field, toml::Value::String(value));
            } else if NUMBER_FIELDS.contains(&field.as_str()) {
                let n: i64 = value
                    .trim()
                    .parse()
                    .map_err(|_| ConfigError::Invalid(format!("{name} must be an integer, got {value:?}")))?;
                table.insert(field, toml::Value::Integer(n));
            }
        }
        let config: Config = table.try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("concurrency", self.concurrency as u64),
            ("timeout_secs", self.timeout_secs),
            ("max_context_chars", self.max_context_chars as u64),
            ("max_perturbations", self.max_perturbations),
            ("top_k", self.top_k as u64),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn limits(&self) -> Limits {
        Limits {
            combination_k: self.combination_k_limit,
            permutation_k: self.permutation_k_limit,
        }
    }

    /// Remote oracle settings, when an endpoint is configured.
    pub fn http_oracle(&self) -> Option<HttpOracleConfig> {
        self.oracle_url.as_ref().map(|url| HttpOracleConfig {
            model: self.oracle_model.clone(),
            api_key: self.api_key.clone(),
            timeout_secs: self.timeout_secs,
            max_context_chars: self.max_context_chars,
            ..HttpOracleConfig::new(url.clone())
        })
    }
}
