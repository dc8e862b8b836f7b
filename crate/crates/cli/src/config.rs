//! `key = value` config files and flag/config/env/default resolution.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::CliError;

pub const SEED_ENV: &str = "PRIVLOC_SEED";

/// Keys are normalized to lowercase with `-` separators, so `embed_size`
/// and `embed-size` name the same setting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`, got `{}`", i + 1, raw.trim()))?;
            let key = normalize(k);
            if key.is_empty() {
                return Err(format!("line {}: empty key", i + 1));
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(format!("line {}: `{key}` set twice", i + 1));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize(key)).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}

/// Resolves settings (flag, then config file, then default) and records the
/// values used for the run manifest.
pub struct Resolver<'a> {
    file: &'a ConfigFile,
    pub resolved: BTreeMap<String, serde_json::Value>,
}

impl<'a> Resolver<'a> {
    pub fn new(file: &'a ConfigFile) -> Self {
        Self {
            file,
            resolved: BTreeMap::new(),
        }
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(text) => Some(
                    text.parse::<T>()
                        .map_err(|e| CliError::Usage(format!("config `{key} = {text}`: {e}")))?,
                ),
                None => None,
            },
        };
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), serde_json::to_value(v).unwrap_or_default());
        }
        Ok(v)
    }

    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        match self.optional(key, flag)? {
            Some(v) => Ok(v),
            None => {
                self.resolved.insert(key.to_string(), serde_json::to_value(&default).unwrap_or_default());
                Ok(default)
            }
        }
    }

    /// A setting with no default; missing is a usage error.
    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("missing required --{key}")))
    }

    /// Flag, config file, `PRIVLOC_SEED`, then 0.
    pub fn seed(&mut self, flag: Option<u64>) -> Result<u64, CliError> {
        if let Some(s) = self.optional("seed", flag)? {
            return Ok(s);
        }
        let seed = match std::env::var(SEED_ENV) {
            Ok(text) => text
                .trim()
                .parse()
                .map_err(|e| CliError::Usage(format!("{SEED_ENV}={text}: {e}")))?,
            Err(_) => 0,
        };
        self.resolved.insert("seed".into(), seed.into());
        Ok(seed)
    }
}
