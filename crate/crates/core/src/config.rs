//! Key-value configuration files: `key = value` lines, optional `[section]` headers,
//! `#` or `;` comments. Keys inside a section are flattened to `section.key`.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut kv = Self::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[') {
                let name = inner
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(path, lineno + 1, "unterminated section header"))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, lineno + 1, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(path, lineno + 1, "empty key"));
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            kv.entries.insert(full, value.trim().to_string());
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("override `{assignment}` is not key=value")))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Parsed value of `key`, or `default` when absent.
    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::InvalidInput(format!("cannot parse `{key} = {v}`"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::InvalidInput(format!("missing required key `{key}`")))?;
        v.parse()
            .map_err(|_| Error::InvalidInput(format!("cannot parse `{key} = {v}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &String)> {
        self.entries.iter()
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

impl FromIterator<(String, String)> for KeyValues {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_comments_and_overrides() {
        let text = "# top\nseed = 7\n[train]\nepochs = 3 \n; note\nlr=0.5\n";
        let mut kv = KeyValues::parse(text, Path::new("x")).unwrap();
        assert_eq!(kv.get("seed"), Some("7"));
        assert_eq!(kv.require::<usize>("train.epochs").unwrap(), 3);
        assert_eq!(kv.get_or("train.lr", 0.0).unwrap(), 0.5);
        kv.apply_override("train.lr=0.25").unwrap();
        assert_eq!(kv.get_or("train.lr", 0.0).unwrap(), 0.25);
        assert_eq!(kv.get_or("missing", 4u32).unwrap(), 4);
        assert!(kv.require::<f64>("missing").is_err());
        assert!(kv.apply_override("nokey").is_err());
        let again = KeyValues::parse(&kv.to_text(), Path::new("y")).unwrap();
        assert_eq!(again, kv);
    }

    #[test]
    fn malformed_lines_report_position() {
        match KeyValues::parse("a = 1\njunk\n", Path::new("f.cfg")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(KeyValues::parse("[open\n", Path::new("f")).is_err());
    }
}
