//! Effective configuration of one command.
//!
//! Precedence, lowest to highest: built-in defaults, keys outside any section of the
//! `--config` file, keys in the file's `[<command>]` section, `--set key=value`, explicit flags.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use egomotion::config::KeyValues;

use crate::error::{CliError, CliResult};

pub const COMMANDS: [&str; 8] = ["simulate", "encode", "register", "train", "infer", "eval", "gradcheck", "compare"];

pub struct Settings {
    command: &'static str,
    given: KeyValues,
    effective: RefCell<KeyValues>,
    read: RefCell<BTreeSet<String>>,
}

impl Settings {
    pub fn new(command: &'static str, config: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut given = KeyValues::new();
        if let Some(path) = config {
            let file = KeyValues::load(path).map_err(|e| CliError::usage(e.to_string()))?;
            let is_section = |k: &str| COMMANDS.iter().any(|c| k.starts_with(&format!("{c}.")));
            for (k, v) in file.iter().filter(|(k, _)| !is_section(k)) {
                given.set(k.clone(), v);
            }
            let prefix = format!("{command}.");
            for (k, v) in file.iter() {
                if let Some(rest) = k.strip_prefix(&prefix) {
                    given.set(rest, v);
                }
            }
        }
        for o in overrides {
            given.apply_override(o).map_err(|e| CliError::usage(e.to_string()))?;
        }
        Ok(Self {
            command,
            given,
            effective: RefCell::new(KeyValues::new()),
            read: RefCell::new(BTreeSet::new()),
        })
    }

    /// Apply an explicit command-line flag.
    pub fn flag<T: Display>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.given.set(key, v);
        }
    }

    pub fn is_given(&self, key: &str) -> bool {
        self.given.contains(key)
    }

    fn parse<T: FromStr>(&self, key: &str, raw: &str) -> CliResult<T> {
        raw.parse()
            .map_err(|_| CliError::usage(format!("{}: cannot parse `{key} = {raw}`", self.command)))
    }

    pub fn get<T: FromStr + Display>(&self, key: &str, default: T) -> CliResult<T> {
        self.read.borrow_mut().insert(key.to_string());
        let v = match self.given.get(key) {
            Some(raw) => self.parse(key, raw)?,
            None => default,
        };
        self.effective.borrow_mut().set(key, &v);
        Ok(v)
    }

    pub fn opt<T: FromStr + Display>(&self, key: &str) -> CliResult<Option<T>> {
        self.read.borrow_mut().insert(key.to_string());
        match self.given.get(key) {
            Some(raw) => {
                let v: T = self.parse(key, raw)?;
                self.effective.borrow_mut().set(key, &v);
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    pub fn require<T: FromStr + Display>(&self, key: &str) -> CliResult<T> {
        self.opt(key)?
            .ok_or_else(|| CliError::usage(format!("{}: missing required setting `{key}`", self.command)))
    }

    /// Reject keys that the command never read.
    pub fn finish(&self) -> CliResult<()> {
        let read = self.read.borrow();
        let unknown: Vec<&String> = self.given.iter().map(|(k, _)| k).filter(|k| !read.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::usage(format!(
                "{}: unknown setting(s): {}",
                self.command,
                unknown.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", ")
            )))
        }
    }

    /// Resolved values of every setting read, defaults included, except `skip`.
    pub fn effective(&self, skip: &[&str]) -> KeyValues {
        self.effective
            .borrow()
            .iter()
            .filter(|(k, _)| !skip.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn command(&self) -> &'static str {
        self.command
    }
}
