//! Flat `key = value` experiment configuration.
//!
//! Each experiment reads its keys through a [`Reader`], which records the
//! resolved value of every key (given or defaulted). Keys left unread are
//! rejected by [`Reader::finish`]. The config hash is taken over the resolved
//! map, so two runs with the same effective settings share a hash.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{fail, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                fail!(Config, "line {}: expected key = value, got {raw:?}", no + 1);
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || k.contains(char::is_whitespace) {
                fail!(Config, "line {}: bad key {k:?}", no + 1);
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                fail!(Config, "line {}: duplicate key {k:?}", no + 1);
            }
        }
        Ok(Config { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets or replaces a key; command-line overrides go through here.
    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn reader(&self) -> Reader<'_> {
        Reader {
            config: self,
            resolved: BTreeMap::new(),
        }
    }
}

pub struct Reader<'a> {
    config: &'a Config,
    resolved: BTreeMap<String, String>,
}

impl Reader<'_> {
    pub fn value<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match self.config.get(key) {
            Some(raw) => match raw.parse::<T>() {
                Ok(v) => v,
                Err(e) => fail!(Config, "{key} = {raw:?}: {e}"),
            },
            None => default,
        };
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn string(&mut self, key: &str, default: &str) -> Result<String> {
        self.value(key, default.to_string())
    }

    /// Comma-separated list.
    pub fn list<T>(&mut self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: FromStr + Display + Clone,
        T::Err: Display,
    {
        let items = match self.config.get(key) {
            Some(raw) => raw
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<T>().map_err(|e| format!("{key}: {s:?}: {e}")))
                .collect::<std::result::Result<Vec<T>, String>>()
                .map_err(crate::BenchError::Config)?,
            None => default.to_vec(),
        };
        let joined: Vec<String> = items.iter().map(ToString::to_string).collect();
        self.resolved.insert(key.to_string(), joined.join(","));
        Ok(items)
    }

    pub fn finish(self) -> Result<Resolved> {
        let unknown: Vec<&String> = self
            .config
            .entries
            .keys()
            .filter(|k| !self.resolved.contains_key(*k))
            .collect();
        if !unknown.is_empty() {
            fail!(Config, "unknown keys: {unknown:?}");
        }
        Ok(Resolved { entries: self.resolved })
    }
}

/// Effective settings of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub entries: BTreeMap<String, String>,
}

impl Resolved {
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`Resolved::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
