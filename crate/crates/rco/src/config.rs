//! Pipeline configuration: defaults, flat key=value config files, flag
//! overlays, validation, and the configuration hash recorded in manifests.
//!
//! Precedence is flags > file > defaults. Endpoint URLs and tokens are
//! deliberately *not* part of the configuration; they come from the
//! `RCO_ACTOR_URL`/`RCO_ACTOR_TOKEN` (and critic/judge) environment
//! variables so credentials never land in files or shell history.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Which model role an endpoint serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Actor,
    Critic,
    Judge,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Actor => "actor",
            Role::Critic => "critic",
            Role::Judge => "judge",
        }
    }

    /// Environment variable holding the chat-completion URL for this role.
    pub fn url_var(self) -> &'static str {
        match self {
            Role::Actor => "RCO_ACTOR_URL",
            Role::Critic => "RCO_CRITIC_URL",
            Role::Judge => "RCO_JUDGE_URL",
        }
    }

    /// Environment variable holding the bearer token for this role.
    pub fn token_var(self) -> &'static str {
        match self {
            Role::Actor => "RCO_ACTOR_TOKEN",
            Role::Critic => "RCO_CRITIC_TOKEN",
            Role::Judge => "RCO_JUDGE_TOKEN",
        }
    }
}

/// Transport backing an endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Deterministic in-process backend for tests and desk runs.
    Mock,
    /// Chat-completion wire client.
    Http,
}

/// Scripted reply policy for mock endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockBehaviorKind {
    /// Deterministic text synthesized from (seed, request).
    Generate,
    /// Judge that always answers `[[A]]`.
    AlwaysA,
    /// Judge that always answers `[[B]]`.
    AlwaysB,
    /// Judge that always answers `[[C]]`.
    Tie,
    /// Judge whose winner depends only on candidate content, so the verdict
    /// letter flips when the candidates swap positions.
    Consistent,
}

impl MockBehaviorKind {
    pub fn name(self) -> &'static str {
        match self {
            MockBehaviorKind::Generate => "generate",
            MockBehaviorKind::AlwaysA => "always_a",
            MockBehaviorKind::AlwaysB => "always_b",
            MockBehaviorKind::Tie => "tie",
            MockBehaviorKind::Consistent => "consistent",
        }
    }
}

/// Critique prompt family used by the critic endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CriticStyleKind {
    #[default]
    Generic,
    AutoJ,
    UltraCm,
}

impl CriticStyleKind {
    pub fn name(self) -> &'static str {
        match self {
            CriticStyleKind::Generic => "generic",
            CriticStyleKind::AutoJ => "auto_j",
            CriticStyleKind::UltraCm => "ultra_cm",
        }
    }
}

/// Description of one role's endpoint, minus credentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub backend: BackendKind,
    /// Model identifier sent on the wire, or a label for mock endpoints.
    pub model: String,
    pub mock_behavior: MockBehaviorKind,
}

/// Full pipeline configuration. See [`PipelineConfig::default`] for the
/// stock values (N=4, M=5, beta=0.1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub n_critiques: u32,
    pub m_refinements: u32,
    pub beta: f64,
    pub seed: u64,
    pub parallelism: u32,
    /// Minimum valid judgments required for a critique to enter reward
    /// computation. `None` means all 2M judgments must be valid.
    pub min_valid_judgments: Option<u32>,
    pub critic_style: CriticStyleKind,
    pub retry_attempts: u32,
    pub retry_base_ms: u64,
    pub max_tokens: u32,
    pub actor: EndpointSpec,
    pub critic: EndpointSpec,
    pub judge: EndpointSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_critiques: 4,
            m_refinements: 5,
            beta: 0.1,
            seed: 0,
            parallelism: 4,
            min_valid_judgments: None,
            critic_style: CriticStyleKind::Generic,
            retry_attempts: 3,
            retry_base_ms: 1000,
            max_tokens: 1024,
            actor: EndpointSpec {
                backend: BackendKind::Mock,
                model: "mock-actor".into(),
                mock_behavior: MockBehaviorKind::Generate,
            },
            critic: EndpointSpec {
                backend: BackendKind::Mock,
                model: "mock-critic".into(),
                mock_behavior: MockBehaviorKind::Generate,
            },
            judge: EndpointSpec {
                backend: BackendKind::Mock,
                model: "mock-judge".into(),
                mock_behavior: MockBehaviorKind::Consistent,
            },
        }
    }
}

/// One named configuration violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigViolation {
    pub key: &'static str,
    pub message: String,
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

/// Errors from config file parsing and overlay application.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("invalid value for {key}: {message}")]
    Value { key: String, message: String },
    #[error("unknown configuration key {key}")]
    UnknownKey { key: String },
    #[error("invalid configuration: {0}")]
    Invalid(ViolationList),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Display wrapper so a violation list can ride inside an error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViolationList(pub Vec<ConfigViolation>);

impl fmt::Display for ViolationList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Check every invariant; returns the full list of violations on failure.
pub fn validate_config(config: &PipelineConfig) -> Result<(), Vec<ConfigViolation>> {
    let mut violations = Vec::new();
    if config.beta <= 0.0 || config.beta.is_nan() {
        violations.push(ConfigViolation {
            key: "beta",
            message: "beta must be positive".into(),
        });
    }
    if config.n_critiques < 1 {
        violations.push(ConfigViolation {
            key: "n_critiques",
            message: "n_critiques must be at least 1".into(),
        });
    }
    if config.m_refinements < 1 {
        violations.push(ConfigViolation {
            key: "m_refinements",
            message: "m_refinements must be at least 1".into(),
        });
    }
    if config.parallelism < 1 {
        violations.push(ConfigViolation {
            key: "parallelism",
            message: "parallelism must be at least 1".into(),
        });
    }
    if let Some(min) = config.min_valid_judgments {
        if min < 1 || min > 2 * config.m_refinements {
            violations.push(ConfigViolation {
                key: "min_valid_judgments",
                message: format!("must be between 1 and 2M={}", 2 * config.m_refinements),
            });
        }
    }
    if config.retry_attempts < 1 {
        violations.push(ConfigViolation {
            key: "retry_attempts",
            message: "retry_attempts must be at least 1".into(),
        });
    }
    if config.max_tokens < 1 {
        violations.push(ConfigViolation {
            key: "max_tokens",
            message: "max_tokens must be at least 1".into(),
        });
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// The effective per-critique judgment floor: configured value, or 2M.
pub fn effective_min_valid(config: &PipelineConfig) -> u32 {
    config
        .min_valid_judgments
        .unwrap_or(2 * config.m_refinements)
}

fn apply_key(config: &mut PipelineConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        value.parse().map_err(|e: T::Err| ConfigError::Value {
            key: key.into(),
            message: e.to_string(),
        })
    }
    fn backend(key: &str, value: &str) -> Result<BackendKind, ConfigError> {
        match value {
            "mock" => Ok(BackendKind::Mock),
            "http" => Ok(BackendKind::Http),
            other => Err(ConfigError::Value {
                key: key.into(),
                message: format!("expected mock or http, got {other}"),
            }),
        }
    }
    fn behavior(key: &str, value: &str) -> Result<MockBehaviorKind, ConfigError> {
        match value {
            "generate" => Ok(MockBehaviorKind::Generate),
            "always_a" => Ok(MockBehaviorKind::AlwaysA),
            "always_b" => Ok(MockBehaviorKind::AlwaysB),
            "tie" => Ok(MockBehaviorKind::Tie),
            "consistent" => Ok(MockBehaviorKind::Consistent),
            other => Err(ConfigError::Value {
                key: key.into(),
                message: format!("unknown mock behavior {other}"),
            }),
        }
    }

    match key {
        "n_critiques" => config.n_critiques = parse(key, value)?,
        "m_refinements" => config.m_refinements = parse(key, value)?,
        "beta" => config.beta = parse(key, value)?,
        "seed" => config.seed = parse(key, value)?,
        "parallelism" => config.parallelism = parse(key, value)?,
        "min_valid_judgments" => config.min_valid_judgments = Some(parse(key, value)?),
        "retry_attempts" => config.retry_attempts = parse(key, value)?,
        "retry_base_ms" => config.retry_base_ms = parse(key, value)?,
        "max_tokens" => config.max_tokens = parse(key, value)?,
        "critic_style" => {
            config.critic_style = match value {
                "generic" => CriticStyleKind::Generic,
                "auto_j" => CriticStyleKind::AutoJ,
                "ultra_cm" => CriticStyleKind::UltraCm,
                other => {
                    return Err(ConfigError::Value {
                        key: key.into(),
                        message: format!("unknown critic style {other}"),
                    })
                }
            }
        }
        "actor_backend" => config.actor.backend = backend(key, value)?,
        "critic_backend" => config.critic.backend = backend(key, value)?,
        "judge_backend" => config.judge.backend = backend(key, value)?,
        "actor_model" => config.actor.model = value.into(),
        "critic_model" => config.critic.model = value.into(),
        "judge_model" => config.judge.model = value.into(),
        "actor_mock_behavior" => config.actor.mock_behavior = behavior(key, value)?,
        "critic_mock_behavior" => config.critic.mock_behavior = behavior(key, value)?,
        "judge_mock_behavior" => config.judge.mock_behavior = behavior(key, value)?,
        other => {
            return Err(ConfigError::UnknownKey { key: other.into() });
        }
    }
    Ok(())
}

/// Parse a flat `key = value` config file. `#` starts a comment; blank
/// lines are ignored.
pub fn load_config_file(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: display.clone(),
        source,
    })?;
    let mut config = PipelineConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Parse {
                path: display,
                line: idx + 1,
                message: "expected `key = value`".into(),
            });
        };
        apply_key(&mut config, key.trim(), value.trim())?;
    }
    Ok(config)
}

/// Apply `(key, value)` overrides on top of a config; flags map to keys 1:1.
pub fn apply_overrides(
    config: &mut PipelineConfig,
    overrides: &[(String, String)],
) -> Result<(), ConfigError> {
    for (key, value) in overrides {
        apply_key(config, key, value)?;
    }
    Ok(())
}

/// Resolve configuration from optional file plus overrides, then validate.
pub fn resolve_config(
    file: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<PipelineConfig, ConfigError> {
    let mut config = match file {
        Some(path) => load_config_file(path)?,
        None => PipelineConfig::default(),
    };
    apply_overrides(&mut config, overrides)?;
    validate_config(&config).map_err(|v| ConfigError::Invalid(ViolationList(v)))?;
    Ok(config)
}

/// The canonical `key = value` listing of a resolved configuration.
///
/// This is what [`config_hash`] hashes and what `explain-config` prints.
pub fn canonical_listing(config: &PipelineConfig) -> String {
    let mut entries: BTreeMap<&'static str, String> = BTreeMap::new();
    entries.insert("n_critiques", config.n_critiques.to_string());
    entries.insert("m_refinements", config.m_refinements.to_string());
    entries.insert("beta", format!("{:?}", config.beta));
    entries.insert("seed", config.seed.to_string());
    entries.insert("parallelism", config.parallelism.to_string());
    entries.insert(
        "min_valid_judgments",
        match config.min_valid_judgments {
            Some(v) => v.to_string(),
            None => format!("{} (default 2M)", effective_min_valid(config)),
        },
    );
    entries.insert("critic_style", config.critic_style.name().into());
    entries.insert("retry_attempts", config.retry_attempts.to_string());
    entries.insert("retry_base_ms", config.retry_base_ms.to_string());
    entries.insert("max_tokens", config.max_tokens.to_string());
    for (role, spec) in [
        ("actor", &config.actor),
        ("critic", &config.critic),
        ("judge", &config.judge),
    ] {
        entries.insert(
            match role {
                "actor" => "actor_backend",
                "critic" => "critic_backend",
                _ => "judge_backend",
            },
            match spec.backend {
                BackendKind::Mock => "mock".into(),
                BackendKind::Http => "http".into(),
            },
        );
        entries.insert(
            match role {
                "actor" => "actor_model",
                "critic" => "critic_model",
                _ => "judge_model",
            },
            spec.model.clone(),
        );
        entries.insert(
            match role {
                "actor" => "actor_mock_behavior",
                "critic" => "critic_mock_behavior",
                _ => "judge_mock_behavior",
            },
            spec.mock_behavior.name().into(),
        );
    }
    let mut out = String::new();
    for (key, value) in entries {
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(&value);
        out.push('\n');
    }
    out
}

/// Stable hex digest of the resolved configuration.
pub fn config_hash(config: &PipelineConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(canonical_listing(config).as_bytes());
    hex::encode(&hasher.finalize()[..16])
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn defaults_are_valid() {
        let config = PipelineConfig::default();
        assert_eq!(config.n_critiques, 4);
        assert_eq!(config.m_refinements, 5);
        assert_eq!(config.beta, 0.1);
        validate_config(&config).unwrap();
    }

    #[test]
    fn zero_beta_names_the_violation() {
        let config = PipelineConfig {
            beta: 0.0,
            ..PipelineConfig::default()
        };
        let violations = validate_config(&config).unwrap_err();
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].key, "beta");
        assert!(violations[0].message.contains("beta must be positive"));
    }

    #[test]
    fn minimal_sampling_settings_are_accepted() {
        let config = PipelineConfig {
            n_critiques: 2,
            m_refinements: 1,
            ..PipelineConfig::default()
        };
        validate_config(&config).unwrap();
    }

    #[test]
    fn file_and_flag_precedence() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("rco.conf");
        std::fs::write(&path, "# desk config\nbeta = 0.2\nn_critiques = 2\n").unwrap();
        let config = resolve_config(
            Some(&path),
            &[("beta".to_string(), "0.5".to_string())],
        )
        .unwrap();
        assert_eq!(config.beta, 0.5); // flag wins
        assert_eq!(config.n_critiques, 2); // file wins over default
        assert_eq!(config.m_refinements, 5); // default
    }

    #[test]
    fn unknown_key_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("rco.conf");
        std::fs::write(&path, "betta = 0.2\n").unwrap();
        assert!(matches!(
            load_config_file(&path),
            Err(ConfigError::UnknownKey { .. })
        ));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let config = PipelineConfig::default();
        assert_eq!(config_hash(&config), config_hash(&config.clone()));
        let changed = PipelineConfig {
            seed: 7,
            ..PipelineConfig::default()
        };
        assert_ne!(config_hash(&config), config_hash(&changed));
    }
}
