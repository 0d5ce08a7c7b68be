//! Flat key=value run configuration: optional config file with command-line
//! `--key value` overrides. Every run embeds the resolved pairs in its
//! outputs so results are reproducible from the artifact alone.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Usage(format!(
                    "{}:{}: expected key=value, got '{line}'",
                    path.display(),
                    idx + 1
                ))
            })?;
            cfg.values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(cfg)
    }

    /// Apply `--key value` pairs on top; `--config FILE` must already have
    /// been consumed by the caller.
    pub fn apply_flags(&mut self, args: &[String]) -> Result<()> {
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let key = arg
                .strip_prefix("--")
                .ok_or_else(|| Error::Usage(format!("expected --key, got '{arg}'")))?;
            let value = args
                .get(i + 1)
                .ok_or_else(|| Error::Usage(format!("flag --{key} is missing a value")))?;
            self.values.insert(key.to_string(), value.clone());
            i += 2;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Usage(format!("required setting '{key}' is missing")))
    }

    /// Parse an optional typed value; a present-but-unparseable value is a
    /// usage error.
    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Usage(format!("setting '{key}' has invalid value '{raw}'"))
            }),
        }
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse_opt(key)?.unwrap_or(default))
    }

    pub fn require_parse<T: FromStr>(&self, key: &str) -> Result<T> {
        self.require(key)?;
        Ok(self.parse_opt(key)?.unwrap())
    }

    /// Resolved configuration as sorted key=value pairs.
    pub fn resolved(&self) -> Vec<(String, String)> {
        self.values.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }
}

/// Build the config for a verb invocation: `--config FILE` first (if any),
/// then the remaining flags override.
pub fn resolve_config(args: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut rest: Vec<String> = Vec::new();
    let mut i = 0;
    while i < args.len() {
        if args[i] == "--config" {
            let path = args
                .get(i + 1)
                .ok_or_else(|| Error::Usage("--config is missing a path".into()))?;
            cfg = RunConfig::from_file(Path::new(path))?;
            i += 2;
        } else {
            rest.push(args[i].clone());
            i += 1;
        }
    }
    cfg.apply_flags(&rest)?;
    Ok(cfg)
}
