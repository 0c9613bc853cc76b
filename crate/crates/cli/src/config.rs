//! `key = value` configuration files. Command-line flags override file
//! values, which override built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

pub const KEYS: &[&str] = &[
    "method", "gamma", "sweeps", "eps", "seed", "trials", "full", "jobs", "out", "format", "regime", "signal", "n",
    "cov", "mu", "restarts", "points",
];

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    path: String,
    values: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn parse(path: &str, text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(format!("{path}:{line_no}:1: expected 'key = value'"));
            };
            let key = k.trim().to_ascii_lowercase().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(format!("{path}:{line_no}:1: unknown key '{}'", k.trim()));
            }
            let col = raw.find('=').map_or(1, |p| p + 2);
            let value = v.trim();
            if value.is_empty() {
                return Err(format!("{path}:{line_no}:{col}: missing value for '{key}'"));
            }
            values.insert(key, (line_no, value.to_string()));
        }
        Ok(Self {
            path: path.to_string(),
            values,
        })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(_, v)| v.as_str())
    }

    /// Typed lookup; a value that does not parse is an error naming its line.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| format!("{}:{line}: invalid value '{v}' for '{key}'", self.path)),
        }
    }

    /// `flag`, else the file value, else `default`.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, String> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    pub fn resolve_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, String> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}
