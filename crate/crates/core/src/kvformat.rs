//! Flat `key = value` text used for configs and manifests.
//!
//! One pair per line, `#` starts a comment line, blank lines are ignored.
//! Keys are `[A-Za-z0-9_.-]+`; values run to the end of the line and are
//! trimmed. Duplicate keys are an error.

use crate::error::{OsrError, Result};
use std::fmt::Write as _;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: Vec<(String, String)>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty() && key.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = KvMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| OsrError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            if !valid_key(key) {
                return Err(OsrError::Config(format!("line {}: invalid key {key:?}", lineno + 1)));
            }
            if map.get(key).is_some() {
                return Err(OsrError::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            map.entries.push((key.to_string(), value.trim().to_string()));
        }
        Ok(map)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Insert or overwrite, keeping first-insertion order.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Overlay `other` on top of `self` (later wins).
    pub fn merge(&mut self, other: &KvMap) {
        for (k, v) in other.iter() {
            self.set(k, v);
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| OsrError::Config(format!("missing key {key}")))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| OsrError::Config(format!("{key}: cannot parse {raw:?}")))
    }

    pub fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        parse_list(self.require(key)?, key)
    }
}

/// Comma-separated list; an empty string is an empty list.
pub fn parse_list<T: std::str::FromStr>(raw: &str, key: &str) -> Result<Vec<T>> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| s.trim().parse().map_err(|_| OsrError::Config(format!("{key}: bad list item {s:?}"))))
        .collect()
}

pub fn join_list<T: std::fmt::Debug>(items: &[T]) -> String {
    items.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}
