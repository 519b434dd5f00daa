//! Line-oriented `key=value` documents used for manifests, config files and
//! run snapshots. Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvDoc {
    entries: BTreeMap<String, String>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::format(path, format!("line {}: expected key=value", lineno + 1))
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn require(&self, key: &str, path: &Path) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::format(path, format!("missing key `{key}`")))
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::invalid(format!("cannot parse `{key}={v}`"))),
        }
    }

    pub fn parse_required<T: FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        let v = self.require(key, path)?;
        v.parse()
            .map_err(|_| Error::format(path, format!("cannot parse `{key}={v}`")))
    }

    /// Whitespace-separated list of floats.
    pub fn floats(&self, key: &str, path: &Path) -> Result<Vec<f64>> {
        self.require(key, path)?
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::format(path, format!("bad number `{t}` in `{key}`")))
            })
            .collect()
    }

    /// Overlay every entry of `other` on top of `self`.
    pub fn merge(&mut self, other: &KvDoc) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl std::fmt::Display for KvDoc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

pub(crate) fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_skips_comments_and_blank_lines() {
        let doc = KvDoc::parse("# header\n\na = 1\nb=two words\n", Path::new("x")).unwrap();
        assert_eq!(doc.get("a"), Some("1"));
        assert_eq!(doc.get("b"), Some("two words"));
        assert_eq!(doc.parse_or("a", 0u32).unwrap(), 1);
        assert_eq!(doc.parse_or("missing", 9u32).unwrap(), 9);
    }

    #[test]
    fn display_round_trips() {
        let mut doc = KvDoc::new();
        doc.set("x", 0.1 + 0.2);
        doc.set("name", "abc");
        let back = KvDoc::parse(&doc.to_string(), Path::new("x")).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.parse_or("x", 0.0f64).unwrap(), 0.1 + 0.2);
    }

    #[test]
    fn missing_equals_is_rejected() {
        assert!(KvDoc::parse("novalue\n", Path::new("x")).is_err());
    }
}
