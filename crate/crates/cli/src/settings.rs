//! Optional `key=value` config files. Precedence: command-line flag, then
//! config file, then the built-in default.

use anyhow::{bail, Result};
use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

/// A bad flag or config value; mapped to exit code 2.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Default)]
pub struct Settings {
    values: HashMap<String, String>,
}

impl Settings {
    /// Loads a config file; `None` yields an empty set. Lines are
    /// `key = value`; blank lines and `#` comments are ignored.
    pub fn load(path: Option<&Path>) -> Result<Settings> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            anyhow::anyhow!(CliError::Usage(format!("cannot read config {}: {e}", path.display())))
        })?;
        let mut values = HashMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(CliError::Usage(format!(
                    "{} line {}: expected key=value, got {raw:?}",
                    path.display(),
                    ln + 1
                )));
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Settings { values })
    }

    /// Flag value if given, else the config-file value, else the default.
    pub fn resolve<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.resolve_opt(key, flag)?.unwrap_or(default))
    }

    /// Same, but with no default: absent everywhere stays `None`.
    pub fn resolve_opt<T>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            Some(text) => match text.parse::<T>() {
                Ok(v) => Ok(Some(v)),
                Err(e) => bail!(CliError::Usage(format!("config key {key}={text:?}: {e}"))),
            },
            None => Ok(None),
        }
    }

    /// Boolean config keys (true/1/yes); absent means false.
    pub fn get_bool(&self, key: &str) -> Result<bool> {
        match self.values.get(key).map(|s| s.as_str()) {
            None => Ok(false),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(other) => bail!(CliError::Usage(format!(
                "config key {key}={other:?} is not a boolean"
            ))),
        }
    }
}
