//! `key=value` text files: recording sidecars and experiment config files.
//!
//! One pair per line, `#` starts a comment, surrounding whitespace is ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KvError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key {key:?}")]
    Duplicate { line: usize, key: String },
    #[error("missing key {0:?}")]
    Missing(String),
    #[error("key {key:?}: cannot parse {value:?}")]
    Value { key: String, value: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(KvError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(KvError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            if entries
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(KvError::Duplicate {
                    line: i + 1,
                    key: key.to_string(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| KvError::Value {
                key: key.to_string(),
                value: v.clone(),
            }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, KvError> {
        self.get(key)?
            .ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let m = KvMap::parse("# header\n subject = 4 \nrate=100 # Hz\n\n").unwrap();
        assert_eq!(m.require::<u32>("subject").unwrap(), 4);
        assert_eq!(m.require::<f64>("rate").unwrap(), 100.0);
        assert_eq!(m.get::<f64>("absent").unwrap(), None);
    }

    #[test]
    fn rejects_malformed() {
        assert!(matches!(
            KvMap::parse("novalue"),
            Err(KvError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            KvMap::parse("a=1\na=2"),
            Err(KvError::Duplicate { line: 2, .. })
        ));
        let m = KvMap::parse("rate=fast").unwrap();
        assert!(matches!(
            m.require::<f64>("rate"),
            Err(KvError::Value { .. })
        ));
        assert!(matches!(m.require::<f64>("k"), Err(KvError::Missing(_))));
    }

    #[test]
    fn render_round_trips() {
        let mut m = KvMap::default();
        m.insert("subject", 7);
        m.insert("rate", 100.0);
        assert_eq!(KvMap::parse(&m.render()).unwrap(), m);
    }
}
