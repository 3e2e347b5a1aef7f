//! Flat `section.key = value` configuration files.
//!
//! ```text
//! # comment
//! dataset.image_size = 32
//! method.name = csghmc
//! shift.levels = 2, 4, 6
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `section.key = value`", lineno + 1)))?;
            let key = key.trim();
            let valid_key = key.split('.').count() >= 2
                && key
                    .split('.')
                    .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
            if !valid_key {
                return Err(Error::Config(format!("line {}: malformed key `{key}`", lineno + 1)));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.entries
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("`{key}` = `{v}`: {e}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    /// Comma-separated list; an empty value gives an empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(v) = self.entries.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| Error::Config(format!("`{key}` item `{s}`: {e}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Rejects keys outside `known`, catching typos before a long run.
    pub fn ensure_known<'a>(&self, known: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let known: std::collections::BTreeSet<&str> = known.into_iter().collect();
        match self.entries.keys().find(|k| !known.contains(k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }

    /// Canonical text form: sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let c = ConfigMap::parse("# header\n  model.depth = 2  # trailing\n\nshift.levels = 2, 4,6\n").unwrap();
        assert_eq!(c.get::<usize>("model.depth").unwrap(), Some(2));
        assert_eq!(c.list::<f64>("shift.levels").unwrap(), Some(vec![2.0, 4.0, 6.0]));
        assert_eq!(c.get::<usize>("model.missing").unwrap(), None);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(ConfigMap::parse("novalue"), Err(Error::Config(_))));
        assert!(matches!(ConfigMap::parse("nosection = 1"), Err(Error::Config(_))));
        assert!(matches!(ConfigMap::parse("a..b = 1"), Err(Error::Config(_))));
        assert!(matches!(ConfigMap::parse("a.b = 1\na.b = 2"), Err(Error::Config(_))));
    }

    #[test]
    fn typed_errors_name_the_key() {
        let c = ConfigMap::parse("train.epochs = ten").unwrap();
        let err = c.get::<usize>("train.epochs").unwrap_err().to_string();
        assert!(err.contains("train.epochs"));
        assert!(c.require::<f64>("train.lr").is_err());
    }

    #[test]
    fn unknown_keys() {
        let c = ConfigMap::parse("a.b = 1\na.c = 2").unwrap();
        assert!(c.ensure_known(["a.b", "a.c"]).is_ok());
        assert!(c.ensure_known(["a.b"]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let c = ConfigMap::parse("z.a = 1\na.z = hello world").unwrap();
        assert_eq!(ConfigMap::parse(&c.to_text()).unwrap(), c);
    }
}
