//! Run configuration.
//!
//! A single TOML file describes named backends, the role each one plays,
//! curation settings, seeds, paths and the concurrency limit:
//!
//! ```toml
//! concurrency = 8
//!
//! [backends.local]
//! endpoint_url = "http://localhost:8000/v1/chat/completions"
//! model_name = "Qwen2.5-7B-Instruct"
//! temperature = 0.7
//! api_key_env = "OPENAI_API_KEY"
//!
//! [roles]
//! generator = "local"
//! evaluator = "local"
//! judge = "local"
//!
//! [curation]
//! max_iterations = 7
//! k_samples = 8
//!
//! [seeds]
//! global = 0
//! split = 0
//! variant = 0
//! shuffle = 0
//!
//! [paths]
//! input = "data/train.jsonl"
//! output = "runs/curated"
//! cache = "runs/cache.jsonl"
//! ```
//!
//! Every key is optional. Command-line flags override file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use idc_core::backend::{Backend, BackendConfig, ReplayCache};
use idc_core::idc::{CurationBackends, CurationConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backends: BTreeMap<String, BackendConfig>,
    pub roles: Roles,
    pub curation: CurationConfig,
    pub seeds: Seeds,
    pub paths: Paths,
    /// Worker threads, which also bounds in-flight model requests.
    pub concurrency: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Roles {
    pub generator: Option<String>,
    pub evaluator: Option<String>,
    pub judge: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub global: u64,
    pub split: u64,
    pub variant: u64,
    pub shuffle: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    /// Where reports and traces go; defaults to the output directory.
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Generator,
    Evaluator,
    Judge,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Generator => "generator",
            Role::Evaluator => "evaluator",
            Role::Judge => "judge",
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }

    /// Checks everything that can be checked without touching the network.
    pub fn validate(&self) -> CliResult<()> {
        for (name, backend) in &self.backends {
            backend
                .validate()
                .map_err(|e| CliError::config(format!("backend {name:?}: {e}")))?;
        }
        for (role, name) in [
            (Role::Generator, &self.roles.generator),
            (Role::Evaluator, &self.roles.evaluator),
            (Role::Judge, &self.roles.judge),
        ] {
            if let Some(name) = name {
                if !self.backends.contains_key(name) {
                    return Err(CliError::config(format!(
                        "role {} refers to unknown backend {name:?}",
                        role.name()
                    )));
                }
            }
        }
        self.curation.validate().map_err(|e| CliError::config(e.to_string()))?;
        if self.concurrency == Some(0) {
            return Err(CliError::config("concurrency must be at least 1"));
        }
        let set: Vec<(&str, &PathBuf)> = [
            ("input", &self.paths.input),
            ("output", &self.paths.output),
            ("cache", &self.paths.cache),
            ("reports", &self.paths.reports),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|p| (k, p)))
        .collect();
        for (i, (a, pa)) in set.iter().enumerate() {
            for (b, pb) in &set[i + 1..] {
                if pa == pb {
                    return Err(CliError::config(format!(
                        "paths.{a} and paths.{b} are the same: {}",
                        pa.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the effective configuration as canonical JSON. Output,
    /// report and cache locations are left out: they do not change results.
    pub fn hash(&self) -> String {
        let mut content = self.clone();
        content.paths.output = None;
        content.paths.reports = None;
        content.paths.cache = None;
        let json = serde_json::to_string(&content).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn input(&self) -> CliResult<&Path> {
        self.paths
            .input
            .as_deref()
            .ok_or_else(|| CliError::config("no input path (use --input or paths.input)"))
    }

    pub fn output(&self) -> CliResult<&Path> {
        self.paths
            .output
            .as_deref()
            .ok_or_else(|| CliError::config("no output directory (use --output or paths.output)"))
    }

    pub fn reports(&self) -> CliResult<&Path> {
        match &self.paths.reports {
            Some(p) => Ok(p),
            None => self.output(),
        }
    }

    /// Name of the backend playing `role`. An unassigned role falls back to
    /// the only configured backend, if there is exactly one.
    pub fn role_backend(&self, role: Role) -> CliResult<&str> {
        let assigned = match role {
            Role::Generator => &self.roles.generator,
            Role::Evaluator => &self.roles.evaluator,
            Role::Judge => &self.roles.judge,
        };
        match assigned {
            Some(name) if self.backends.contains_key(name) => Ok(name),
            Some(name) => Err(CliError::config(format!(
                "role {} refers to unknown backend {name:?}",
                role.name()
            ))),
            None if self.backends.len() == 1 => Ok(self.backends.keys().next().expect("one backend")),
            None => Err(CliError::config(format!("no backend assigned to role {}", role.name()))),
        }
    }

    /// Resolves the listed roles before any work starts.
    pub fn check_roles(&self, roles: &[Role]) -> CliResult<()> {
        roles.iter().try_for_each(|&r| self.role_backend(r).map(drop))
    }
}

/// Builds backends on demand, sharing one replay cache between them.
pub struct BackendFactory<'a> {
    config: &'a RunConfig,
    cache: Option<Arc<ReplayCache>>,
}

impl<'a> BackendFactory<'a> {
    pub fn new(config: &'a RunConfig) -> CliResult<Self> {
        let cache = match &config.paths.cache {
            Some(path) => Some(Arc::new(
                ReplayCache::open(path).map_err(|e| CliError::config(format!("cannot open cache: {e}")))?,
            )),
            None => None,
        };
        Ok(BackendFactory { config, cache })
    }

    pub fn backend(&self, role: Role) -> CliResult<Backend> {
        let name = self.config.role_backend(role)?;
        Backend::from_config(&self.config.backends[name], self.cache.clone())
            .map_err(|e| CliError::config(format!("backend {name:?} for role {}: {e}", role.name())))
    }

    pub fn curation(&self) -> CliResult<CurationBackends> {
        Ok(CurationBackends {
            generator: self.backend(Role::Generator)?,
            evaluator: self.backend(Role::Evaluator)?,
            judge: self.backend(Role::Judge)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> RunConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse("");
        assert_eq!(c.curation.max_iterations, 7);
        assert_eq!(c.curation.k_samples, 8);
        assert_eq!(c.seeds, Seeds::default());
        assert!(c.validate().is_ok());
    }

    #[test]
    fn unknown_role_backend_is_rejected() {
        let c = parse(
            r#"
            [backends.a]
            endpoint_url = "synthetic"
            model_name = "m"
            [roles]
            judge = "b"
            "#,
        );
        let err = c.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("judge"));
    }

    #[test]
    fn single_backend_fills_unassigned_roles() {
        let c = parse(
            r#"
            [backends.only]
            endpoint_url = "synthetic"
            model_name = "m"
            "#,
        );
        assert_eq!(c.role_backend(Role::Evaluator).unwrap(), "only");
        assert_eq!(c.backends["only"].temperature, 0.7);
    }

    #[test]
    fn two_backends_need_explicit_roles() {
        let c = parse(
            r#"
            [backends.a]
            endpoint_url = "synthetic"
            model_name = "m"
            [backends.b]
            endpoint_url = "synthetic"
            model_name = "n"
            [roles]
            generator = "a"
            "#,
        );
        assert_eq!(c.role_backend(Role::Generator).unwrap(), "a");
        assert!(c.role_backend(Role::Judge).is_err());
    }

    #[test]
    fn duplicate_paths_are_rejected() {
        let c = parse(
            r#"
            [paths]
            input = "x.jsonl"
            cache = "x.jsonl"
            "#,
        );
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[curation]\nrounds = 3\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse("[seeds]\nglobal = 1\n");
        let b = parse("[seeds]\nglobal = 2\n");
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        let mut moved = a.clone();
        moved.paths.output = Some("elsewhere".into());
        assert_eq!(moved.hash(), a.hash());
    }
}
