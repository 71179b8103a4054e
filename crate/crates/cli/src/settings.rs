//! Run settings: defaults, then the config file, then command-line flags.
//!
//! The config file holds one `key = value` pair per line. `#` starts a
//! comment, blank lines are ignored and `-` in keys is read as `_`, so
//! `scale-factor = 50` and `scale_factor = 50` are the same key. Lists are
//! comma-separated (`dz_list = 1, 300, 600`).

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, CliResult};

pub const KNOWN_KEYS: &[&str] = &[
    "dz",
    "omega",
    "m",
    "scale_factor",
    "wavelength",
    "ceiling",
    "band",
    "seed",
    "out",
    "format",
    "station_elevation",
    "min_coverage",
    "samples",
    "cn2",
    "outer_scale",
    "inner_scale",
    "n0",
    "dz_list",
    "outer_scales",
    "omegas",
    "ms",
    "trials",
    "oversample",
    "guard_fraction",
    "reference",
    "model",
    "init",
    "fix",
    "starts",
    "magnitude_decades",
    "scale_range",
    "sounding",
    "bin",
];

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Settings {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::usage(format!("config line {}: expected `key = value`", i + 1))
            })?;
            let key = normalize_key(key);
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::usage(format!(
                    "config line {}: unknown key `{key}`",
                    i + 1
                )));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::usage(format!(
                    "config line {}: duplicate key `{key}`",
                    i + 1
                )));
            }
        }
        Ok(Settings { values })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| e.context(path.display()))
    }

    /// Overrides `key` when the flag was given.
    pub fn set<T: Display>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.values.insert(key.to_string(), v.to_string());
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::usage(format!("invalid value `{v}` for {key}: {e}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(v) = self.values.get(key) else {
            return Ok(None);
        };
        let items = v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| CliError::usage(format!("invalid item `{s}` in {key}: {e}")))
            })
            .collect::<CliResult<Vec<T>>>()?;
        if items.is_empty() {
            return Err(CliError::usage(format!("{key} is an empty list")));
        }
        Ok(Some(items))
    }

    pub fn list_or<T: FromStr>(&self, key: &str, default: Vec<T>) -> CliResult<Vec<T>>
    where
        T::Err: Display,
    {
        Ok(self.list(key)?.unwrap_or(default))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_dashes() {
        let s = Settings::parse("# run\ndz = 200  # m\nscale-factor=50\n\ndz_list = 1, 2,3\n").unwrap();
        assert_eq!(s.get::<f64>("dz").unwrap(), Some(200.0));
        assert_eq!(s.get::<f64>("scale_factor").unwrap(), Some(50.0));
        assert_eq!(s.list::<f64>("dz_list").unwrap(), Some(vec![1.0, 2.0, 3.0]));
    }

    #[test]
    fn flags_override_file() {
        let mut s = Settings::parse("omega = 3").unwrap();
        s.set("omega", Some(1));
        s.set::<usize>("m", None);
        assert_eq!(s.get_or("omega", 2usize).unwrap(), 1);
        assert_eq!(s.get_or("m", 1usize).unwrap(), 1);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(Settings::parse("dz 100").is_err());
        assert!(Settings::parse("dzz = 100").is_err());
        assert!(Settings::parse("dz = 1\ndz = 2").is_err());
        let s = Settings::parse("dz = abc").unwrap();
        assert!(s.get::<f64>("dz").is_err());
    }
}
