//! Flat `key = value` text, the format of every config file and manifest.
//!
//! `#` starts a comment line; blank lines are ignored; keys are unique.

use std::collections::BTreeMap;
use std::path::Path;

use crate::{ConfigIssue, Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvFile {
    entries: BTreeMap<String, String>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut issues = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                issues.push(ConfigIssue {
                    key: format!("line {}", n + 1),
                    reason: format!("expected `key = value`, got `{line}`"),
                });
                continue;
            };
            let k = k.trim().to_string();
            if k.is_empty() {
                issues.push(ConfigIssue {
                    key: format!("line {}", n + 1),
                    reason: "empty key".into(),
                });
            } else if entries.insert(k.clone(), v.trim().to_string()).is_some() {
                issues.push(ConfigIssue {
                    key: k,
                    reason: "duplicate key".into(),
                });
            }
        }
        if issues.is_empty() {
            Ok(KvFile { entries })
        } else {
            Err(Error::InvalidConfig(issues))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical text: sorted keys, one `key = value` per line.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// Typed field reader that collects every problem instead of stopping at the
/// first one, and remembers which keys were consumed.
pub(crate) struct FieldReader<'a> {
    kv: &'a KvFile,
    pub(crate) issues: Vec<ConfigIssue>,
    used: std::collections::BTreeSet<String>,
}

impl<'a> FieldReader<'a> {
    pub(crate) fn new(kv: &'a KvFile) -> Self {
        FieldReader {
            kv,
            issues: Vec::new(),
            used: Default::default(),
        }
    }

    pub(crate) fn issue(&mut self, key: &str, reason: impl Into<String>) {
        self.issues.push(ConfigIssue {
            key: key.to_string(),
            reason: reason.into(),
        });
    }

    pub(crate) fn raw(&mut self, key: &str) -> Option<&'a str> {
        self.used.insert(key.to_string());
        self.kv.get(key)
    }

    pub(crate) fn parse_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> T
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => default,
            Some(v) => match v.parse::<T>() {
                Ok(x) => x,
                Err(e) => {
                    self.issue(key, format!("cannot parse `{v}`: {e}"));
                    default
                }
            },
        }
    }

    pub(crate) fn opt<T: std::str::FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key)?;
        match v.parse::<T>() {
            Ok(x) => Some(x),
            Err(e) => {
                self.issue(key, format!("cannot parse `{v}`: {e}"));
                None
            }
        }
    }

    /// Every key looked up so far, present or not.
    pub(crate) fn used(&self) -> impl Iterator<Item = &str> {
        self.used.iter().map(String::as_str)
    }

    /// Reject keys that were never read.
    pub(crate) fn reject_unknown(&mut self) {
        let unknown: Vec<String> = self
            .kv
            .iter()
            .map(|(k, _)| k.to_string())
            .filter(|k| !self.used.contains(k))
            .collect();
        for k in unknown {
            self.issue(&k, "unknown key");
        }
    }

    pub(crate) fn finish(mut self) -> Result<()> {
        self.reject_unknown();
        if self.issues.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(self.issues))
        }
    }
}
