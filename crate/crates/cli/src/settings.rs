//! Plain `key = value` run files. Flags given on the command line win over
//! the file, which wins over built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chartformer::error::{Error, Result};

pub const KEYS: &[&str] = &[
    "corpus",
    "vocab",
    "checkpoint",
    "out_dir",
    "input",
    "output",
    "gold",
    "pred",
    "deps",
    "per_sentence",
    "dim",
    "layers",
    "heads",
    "ffn_dim",
    "window",
    "dropout",
    "init_std",
    "lr",
    "weight_decay",
    "beta1",
    "beta2",
    "eps",
    "batch_size",
    "max_total_len",
    "max_len",
    "epochs",
    "seed",
    "sequential",
    "word_constraint",
];

#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("config line {}: expected key = value", idx + 1)));
            };
            let (k, v) = (k.trim().replace('-', "_"), v.trim());
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("config line {}: unknown key {k:?}", idx + 1)));
            }
            values.insert(k, v.to_string());
        }
        Ok(Self { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        debug_assert!(KEYS.contains(&key), "{key}");
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("config key {key}: cannot parse {v:?}"))),
        }
    }

    /// Flag, else file, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    /// Boolean switch: set by the flag, else by the file.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.get(key)?.unwrap_or(false))
    }

    /// Path from the flag or the file, which must exist.
    pub fn input_path(&self, flag: Option<PathBuf>, key: &str) -> Result<PathBuf> {
        let path = self.path(flag, key)?;
        if !path.exists() {
            return Err(Error::Config(format!("{key} file {} does not exist", path.display())));
        }
        Ok(path)
    }

    /// Path from the flag or the file; an error names the missing setting.
    pub fn path(&self, flag: Option<PathBuf>, key: &str) -> Result<PathBuf> {
        flag.or(self.get(key)?)
            .ok_or_else(|| Error::Config(format!("no {key} given (use --{} or the config file)", key.replace('_', "-"))))
    }

    pub fn optional_path(&self, flag: Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
        Ok(flag.or(self.get(key)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let s = Settings::parse("dim = 16\n# comment\nlr=0.5\nword-constraint = true\n").unwrap();
        assert_eq!(s.pick(Some(8usize), "dim", 64).unwrap(), 8);
        assert_eq!(s.pick(None, "dim", 64usize).unwrap(), 16);
        assert_eq!(s.pick(None, "layers", 3usize).unwrap(), 3);
        assert_eq!(s.pick(None, "lr", 1.0f64).unwrap(), 0.5);
        assert!(s.switch(false, "word_constraint").unwrap());
    }

    #[test]
    fn bad_lines_are_config_errors() {
        assert_eq!(Settings::parse("dim 16").unwrap_err().exit_code(), 2);
        assert!(Settings::parse("colour = red").is_err());
        let s = Settings::parse("dim = many").unwrap();
        assert!(s.pick::<usize>(None, "dim", 1).is_err());
    }
}
