//! `key=value` run configuration. Values come from command-line flags first,
//! then the config file, then built-in defaults. Every resolved value is
//! recorded so a run can be repeated from its log alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: Vec<(String, String)>,
}

impl Resolver {
    pub fn from_file(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut file = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key=value, got `{line}`", n + 1))?;
            let k = k.trim().to_string();
            if file.insert(k.clone(), v.trim().to_string()).is_some() {
                bail!("line {}: duplicate key `{k}`", n + 1);
            }
        }
        Ok(Self {
            file,
            ..Self::default()
        })
    }

    fn lookup<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("config key `{key}`: cannot parse `{v}`: {e}")),
            None => Ok(None),
        }
    }

    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.lookup(key, flag)?.unwrap_or(default);
        self.record(key, &v);
        Ok(v)
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.lookup(key, flag)?;
        if let Some(v) = &v {
            self.record(key, v);
        }
        Ok(v)
    }

    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        let v = self.value(key, flag.then_some(true), false)?;
        Ok(v)
    }

    pub fn in_file(&self, key: &str) -> bool {
        self.file.contains_key(key)
    }

    /// Records a derived value without consuming a key.
    pub fn record(&mut self, key: &str, value: &impl Display) {
        let value = value.to_string();
        match self.resolved.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.resolved.push((key.to_string(), value)),
        }
    }

    /// Fails on config-file keys that no option consumed.
    pub fn finish(&self) -> Result<()> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            bail!("unknown config key(s): {}", unknown.join(", "));
        }
        Ok(())
    }

    pub fn log(&self, command: &str) -> String {
        let mut s = format!("# ionreadout {command}\n");
        for (k, v) in &self.resolved {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let mut r = Resolver::parse("seed = 5\nn=10 # comment\n").unwrap();
        assert_eq!(r.value("seed", Some(7u64), 0).unwrap(), 7);
        assert_eq!(r.value("n", None, 3usize).unwrap(), 10);
        assert_eq!(r.value("balance", None, 0.5f64).unwrap(), 0.5);
        r.finish().unwrap();
        assert_eq!(r.log("simulate"), "# ionreadout simulate\nseed=7\nn=10\nbalance=0.5\n");
    }

    #[test]
    fn unknown_and_malformed_keys_rejected() {
        let r = Resolver::parse("sed=1\n").unwrap();
        assert!(r.finish().is_err());
        assert!(Resolver::parse("seed\n").is_err());
        assert!(Resolver::parse("a=1\na=2\n").is_err());
        let mut r = Resolver::parse("n=ten\n").unwrap();
        assert!(r.value("n", None, 1usize).is_err());
    }
}
