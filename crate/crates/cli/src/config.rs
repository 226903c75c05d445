//! Key-value config files and flag/file/default resolution.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use stdiff::{Error, Result};

/// Every key a config file may set, across all subcommands.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "plant",
    "length",
    "a",
    "b",
    "sigma",
    "control-amplitude",
    "control-hold",
    "level",
    "mean-block-len",
    "cofailure-fraction",
    "steps",
    "batch-size",
    "learning-rate",
    "p-drop",
    "validation-fraction",
    "eval-every",
    "ema-decay",
    "diffusion-steps",
    "beta-start",
    "beta-end",
    "time-embed-dim",
    "encoder-hidden",
    "context-dim",
    "predictor-width",
    "predictor-blocks",
    "method",
    "samples",
    "mode",
    "covariate-fallback",
    "anchor-leading",
];

/// `key = value` lines; `#` starts a comment. Underscores in keys are read as dashes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected `key = value`", n + 1)))?;
            let key = k.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("config line {}: unknown key `{key}`", n + 1)));
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("config line {}: duplicate key `{key}`", n + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

/// Resolves settings with precedence flag > config file > default and
/// records every resolved value for the manifest.
pub struct Resolver<'a> {
    file: &'a ConfigFile,
    pub resolved: BTreeMap<String, String>,
}

impl<'a> Resolver<'a> {
    pub fn new(file: &'a ConfigFile) -> Self {
        Self {
            file,
            resolved: BTreeMap::new(),
        }
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => self
                .file
                .get(key)
                .map(|s| s.parse::<T>().map_err(|e| Error::Config(format!("invalid value for `{key}`: {e}"))))
                .transpose()?,
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        match self.optional(key, flag)? {
            Some(v) => Ok(v),
            None => {
                self.resolved.insert(key.to_string(), default.to_string());
                Ok(default)
            }
        }
    }

    /// Comma-separated list of positive integers.
    pub fn sizes(&mut self, key: &str, flag: Option<String>, default: &[usize]) -> Result<Vec<usize>> {
        let joined = default.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
        let raw = self.value(key, flag, joined)?;
        if raw.trim().is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Config(format!("invalid value for `{key}`: {e}")))
            })
            .collect()
    }

    pub fn record(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(key.to_string(), value.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_file_overrides_default() {
        let file = ConfigFile::parse("# run\nsteps = 300\nlearning_rate=0.01\n").unwrap();
        let mut r = Resolver::new(&file);
        assert_eq!(r.value("steps", Some(5usize), 1).unwrap(), 5);
        assert_eq!(r.value("learning-rate", None, 1e-3).unwrap(), 0.01);
        assert_eq!(r.value("samples", None, 16usize).unwrap(), 16);
        assert_eq!(r.resolved["steps"], "5");
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(ConfigFile::parse("bogus = 1").is_err());
        assert!(ConfigFile::parse("steps").is_err());
        assert!(ConfigFile::parse("steps = 1\nsteps = 2").is_err());
        let file = ConfigFile::parse("steps = many").unwrap();
        assert!(Resolver::new(&file).value("steps", None, 1usize).unwrap_err().is_config());
    }

    #[test]
    fn size_lists() {
        let file = ConfigFile::parse("encoder-hidden = 16, 8").unwrap();
        assert_eq!(Resolver::new(&file).sizes("encoder-hidden", None, &[64]).unwrap(), vec![16, 8]);
    }
}
