//! Line-oriented `key = value` configuration with one section per command,
//! and the flag/config/default precedence resolver.
//!
//! Command-line flags override config-file values, which override built-in
//! defaults. Every value a command actually resolves is recorded, defaults
//! included, so the run manifest reflects the full effective configuration.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Parsed config file: section name -> key -> value.
#[derive(Debug, Default)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                current = Some(name.trim().to_string());
                sections.entry(name.trim().to_string()).or_default();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected `key = value`, got {raw:?}", idx + 1);
            };
            let Some(section) = current.clone() else {
                bail!(
                    "config line {}: key {:?} appears before any [section] header",
                    idx + 1,
                    key.trim()
                );
            };
            sections
                .get_mut(&section)
                .unwrap()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { sections })
    }

    pub fn section(&self, name: &str) -> BTreeMap<String, String> {
        self.sections.get(name).cloned().unwrap_or_default()
    }
}

/// Merged settings for one command invocation.
#[derive(Debug)]
pub struct Settings {
    command: String,
    values: BTreeMap<String, String>,
    allowed: Vec<&'static str>,
    effective: RefCell<BTreeMap<String, String>>,
}

impl Settings {
    /// Builds the resolver from the command's config section plus flag
    /// overrides, validating every configured key against the allowlist.
    pub fn new(
        command: &str,
        section: BTreeMap<String, String>,
        overrides: Vec<(&'static str, String)>,
        allowed: Vec<&'static str>,
    ) -> Result<Self> {
        for key in section.keys() {
            if !allowed.contains(&key.as_str()) {
                bail!(
                    "unknown key {key:?} in config section [{command}]; known keys: {}",
                    allowed.join(", ")
                );
            }
        }
        let mut values = section;
        for (key, value) in overrides {
            if !allowed.contains(&key) {
                bail!("flag --{key} does not apply to the {command} command");
            }
            values.insert(key.to_string(), value);
        }
        Ok(Settings {
            command: command.to_string(),
            values,
            allowed,
            effective: RefCell::new(BTreeMap::new()),
        })
    }

    fn raw(&self, key: &str) -> Option<&String> {
        debug_assert!(
            self.allowed.contains(&key),
            "key {key} missing from [{}] allowlist",
            self.command
        );
        self.values.get(key)
    }

    fn record(&self, key: &str, value: String) {
        self.effective.borrow_mut().insert(key.to_string(), value);
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        let out = match self.raw(key) {
            Some(v) => v
                .parse()
                .with_context(|| format!("{key}: expected an integer, got {v:?}"))?,
            None => default,
        };
        self.record(key, out.to_string());
        Ok(out)
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        let out = match self.raw(key) {
            Some(v) => v
                .parse()
                .with_context(|| format!("{key}: expected an integer, got {v:?}"))?,
            None => default,
        };
        self.record(key, out.to_string());
        Ok(out)
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        let out = match self.raw(key) {
            Some(v) => v
                .parse()
                .with_context(|| format!("{key}: expected a float, got {v:?}"))?,
            None => default,
        };
        self.record(key, out.to_string());
        Ok(out)
    }

    pub fn get_string(&self, key: &str, default: &str) -> String {
        let out = self.raw(key).cloned().unwrap_or_else(|| default.to_string());
        self.record(key, out.clone());
        out
    }

    pub fn get_opt_string(&self, key: &str) -> Option<String> {
        let out = self.raw(key).cloned();
        if let Some(v) = &out {
            self.record(key, v.clone());
        }
        out
    }

    /// Comma-separated unsigned integers.
    pub fn get_usize_list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        let out = match self.raw(key) {
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .with_context(|| format!("{key}: expected integers, got {p:?}"))
                })
                .collect::<Result<Vec<usize>>>()?,
            None => default.to_vec(),
        };
        self.record(
            key,
            out.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
        );
        Ok(out)
    }

    /// Snapshot of every value resolved so far, for the run manifest.
    pub fn effective(&self) -> BTreeMap<String, String> {
        self.effective.borrow().clone()
    }
}
