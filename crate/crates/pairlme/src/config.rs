//! Plain-text `key = value` configuration files. Command-line flags take
//! precedence over file entries.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::user(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// `#` starts a comment; keys are case-sensitive, `-` and `_` are interchangeable.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::user(format!("config line {}: expected key = value", n + 1)))?;
            let key = normalize(k.trim());
            if key.is_empty() {
                return Err(CliError::user(format!("config line {}: empty key", n + 1)));
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::user(format!("config line {}: duplicate key `{key}`", n + 1)));
            }
        }
        Ok(ConfigFile { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(&normalize(key)).map(String::as_str)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key).map(|v| v.parse::<T>().map_err(|e| CliError::user(format!("config `{key}`: {e}")))).transpose()
    }

    /// Reject keys outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> CliResult<()> {
        let allowed: Vec<String> = allowed.iter().map(|k| normalize(k)).collect();
        match self.entries.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(CliError::user(format!("unknown config key `{k}`"))),
            None => Ok(()),
        }
    }
}

fn normalize(key: &str) -> String {
    key.replace('-', "_")
}

/// Flag value if given, otherwise the file entry.
pub fn pick<T: FromStr>(flag: Option<T>, file: Option<&ConfigFile>, key: &str) -> CliResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match (flag, file) {
        (Some(v), _) => Ok(Some(v)),
        (None, Some(f)) => f.parsed(key),
        (None, None) => Ok(None),
    }
}
