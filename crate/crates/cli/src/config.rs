//! Flag parsing and INI-style config files.
//!
//! Every command accepts long-form `--key value` flags plus an optional
//! `--config file.ini` with flat `key = value` lines; flags override the
//! file. Numeric fields are validated when read and unknown keys are
//! reported as usage errors.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};

/// A usage problem: reported on one line, exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub type UsageResult<T> = Result<T, UsageError>;

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

/// Key-value view over config file entries and command-line flags.
pub struct RunConfig {
    values: BTreeMap<String, String>,
    consumed: RefCell<BTreeSet<String>>,
}

impl RunConfig {
    /// Parses `--key value` pairs; a `--config` file is loaded first and
    /// then overridden by the remaining flags.
    pub fn from_args(args: &[String]) -> UsageResult<Self> {
        let mut flags = BTreeMap::new();
        let mut i = 0;
        while i < args.len() {
            let key = args[i]
                .strip_prefix("--")
                .ok_or_else(|| usage(format!("expected a --flag, found {:?}", args[i])))?;
            if key.is_empty() {
                return Err(usage("empty flag name"));
            }
            let value = args
                .get(i + 1)
                .ok_or_else(|| usage(format!("flag --{key} is missing its value")))?;
            flags.insert(key.to_string(), value.clone());
            i += 2;
        }
        let mut values = BTreeMap::new();
        if let Some(path) = flags.get("config") {
            for (k, v) in parse_ini(path)? {
                values.insert(k, v);
            }
        }
        values.extend(flags);
        let cfg = Self {
            values,
            consumed: RefCell::new(BTreeSet::new()),
        };
        cfg.mark("config");
        Ok(cfg)
    }

    fn mark(&self, key: &str) {
        self.consumed.borrow_mut().insert(key.to_string());
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.mark(key);
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn str_opt(&self, key: &str) -> Option<String> {
        self.raw(key).map(|s| s.to_string())
    }

    pub fn str_or(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    pub fn require_str(&self, key: &str) -> UsageResult<String> {
        self.raw(key)
            .map(|s| s.to_string())
            .ok_or_else(|| usage(format!("missing required flag --{key}")))
    }

    pub fn choice(&self, key: &str, allowed: &[&str]) -> UsageResult<String> {
        let v = self.require_str(key)?;
        if allowed.contains(&v.as_str()) {
            Ok(v)
        } else {
            Err(usage(format!(
                "--{key} must be one of {allowed:?}, found {v:?}"
            )))
        }
    }

    pub fn choice_or(&self, key: &str, allowed: &[&str], default: &str) -> UsageResult<String> {
        match self.raw(key) {
            None => Ok(default.to_string()),
            Some(v) if allowed.contains(&v) => Ok(v.to_string()),
            Some(v) => Err(usage(format!(
                "--{key} must be one of {allowed:?}, found {v:?}"
            ))),
        }
    }

    pub fn f64_opt(&self, key: &str) -> UsageResult<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| usage(format!("--{key} expects a number, found {v:?}"))),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> UsageResult<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    /// Positive float with a default.
    pub fn pos_f64_or(&self, key: &str, default: f64) -> UsageResult<f64> {
        let v = self.f64_or(key, default)?;
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(usage(format!("--{key} must be positive, found {v}")))
        }
    }

    /// Nonnegative float with a default.
    pub fn nonneg_f64_or(&self, key: &str, default: f64) -> UsageResult<f64> {
        let v = self.f64_or(key, default)?;
        if v >= 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(usage(format!("--{key} must be nonnegative, found {v}")))
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> UsageResult<u64> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<u64>()
                .map_err(|_| usage(format!("--{key} expects an integer, found {v:?}"))),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> UsageResult<usize> {
        Ok(self.u64_or(key, default as u64)? as usize)
    }

    /// Positive integer with a default.
    pub fn pos_usize_or(&self, key: &str, default: usize) -> UsageResult<usize> {
        let v = self.usize_or(key, default)?;
        if v > 0 {
            Ok(v)
        } else {
            Err(usage(format!("--{key} must be positive")))
        }
    }

    /// Fails on any flag that no getter looked at.
    pub fn finish(&self) -> UsageResult<()> {
        let consumed = self.consumed.borrow();
        let unknown: Vec<&String> = self
            .values
            .keys()
            .filter(|k| !consumed.contains(*k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(usage(format!("unknown flags: {unknown:?}")))
        }
    }
}

/// Flat `key = value` file; `#` and `;` start comments.
fn parse_ini(path: &str) -> UsageResult<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {path:?}: {e}")))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("{path}:{}: expected key = value", lineno + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
