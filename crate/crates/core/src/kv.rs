//! Flat `key=value` text used by config files and checkpoint headers.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Result, RsmError};

/// Parsed `key=value` lines. Keys are consumed as they are read so that
/// whatever is left afterwards can be reported as unknown.
#[derive(Debug, Clone, Default)]
pub struct KvMap {
    entries: BTreeMap<String, (String, usize)>,
    errors: Vec<String>,
}

impl KvMap {
    /// Parses text; `#` starts a comment, blank lines are skipped.
    pub fn parse(text: &str) -> Self {
        let mut map = KvMap::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    let k = k.trim().to_string();
                    if map.entries.contains_key(&k) {
                        map.errors.push(format!("line {}: duplicate key `{k}`", i + 1));
                    }
                    map.entries.insert(k, (v.trim().to_string(), i + 1));
                }
                None => map
                    .errors
                    .push(format!("line {}: expected key=value, got `{line}`", i + 1)),
            }
        }
        map
    }

    pub fn from_pairs<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Self {
        let mut map = KvMap::default();
        for (i, (k, v)) in pairs.into_iter().enumerate() {
            map.entries.insert(k.into(), (v.into(), i + 1));
        }
        map
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn take_raw(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(v, _)| v)
    }

    /// Removes and parses `key`; parse failures are recorded, not returned.
    pub fn take<V: FromStr>(&mut self, key: &str) -> Option<V>
    where
        V::Err: Display,
    {
        let (raw, line) = self.entries.remove(key)?;
        match raw.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors.push(format!("line {line}: `{key}`: {e}"));
                None
            }
        }
    }

    pub fn take_or<V: FromStr>(&mut self, key: &str, default: V) -> V
    where
        V::Err: Display,
    {
        self.take(key).unwrap_or(default)
    }

    /// `key` must be present.
    pub fn require<V: FromStr>(&mut self, key: &str) -> Option<V>
    where
        V::Err: Display,
    {
        if !self.entries.contains_key(key) {
            self.errors.push(format!("missing required key `{key}`"));
            return None;
        }
        self.take(key)
    }

    pub fn error(&mut self, msg: impl Into<String>) {
        self.errors.push(msg.into());
    }

    pub fn remaining_keys(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    /// Fails with every recorded problem, plus one line per key nobody
    /// consumed.
    pub fn finish(mut self) -> Result<()> {
        for (k, (_, line)) in std::mem::take(&mut self.entries) {
            self.errors.push(format!("line {line}: unknown key `{k}`"));
        }
        self.finish_ignoring_unknown()
    }

    pub fn finish_ignoring_unknown(self) -> Result<()> {
        if self.errors.is_empty() {
            Ok(())
        } else {
            Err(RsmError::Config(self.errors.join("; ")))
        }
    }

    pub fn errors(&self) -> &[String] {
        &self.errors
    }
}

/// Renders pairs as `key=value` lines.
pub fn render(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    out
}
