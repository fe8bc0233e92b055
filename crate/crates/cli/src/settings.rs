//! Merges command-line flags with the optional config file. A flag always
//! wins; otherwise the key from the command's table is used; otherwise the
//! built-in default.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use crate::CliError;

/// One table of the config file plus a record of which keys were read.
pub struct Section {
    name: String,
    table: toml::Table,
    used: RefCell<BTreeSet<String>>,
}

impl Section {
    /// Table `name` of a parsed config, or an empty section.
    pub fn from_config(config: Option<&toml::Table>, name: &str) -> Result<Section, CliError> {
        let table = match config.and_then(|c| c.get(name)) {
            None => toml::Table::new(),
            Some(toml::Value::Table(t)) => t.clone(),
            Some(_) => return Err(CliError::Usage(format!("config key `{name}` must be a table"))),
        };
        Ok(Section {
            name: name.to_string(),
            table,
            used: RefCell::new(BTreeSet::new()),
        })
    }

    fn lookup<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.used.borrow_mut().insert(key.to_string());
        match self.table.get(key) {
            None => Ok(None),
            Some(v) => v.clone().try_into().map(Some).map_err(|e| {
                CliError::Usage(format!("config [{}] {key}: {e}", self.name))
            }),
        }
    }

    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        let from_config = self.lookup(key)?;
        Ok(flag.or(from_config).unwrap_or(default))
    }

    pub fn pick_opt<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        let from_config = self.lookup(key)?;
        Ok(flag.or(from_config))
    }

    pub fn pick_path(&self, flag: Option<PathBuf>, key: &str) -> Result<Option<PathBuf>, CliError> {
        self.pick_opt(flag, key)
    }

    pub fn require_path(&self, flag: Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
        self.pick_path(flag, key)?
            .ok_or_else(|| CliError::Usage(format!("missing required option --{}", key.replace('_', "-"))))
    }

    pub fn pick_flag(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        Ok(flag || self.lookup::<bool>(key)?.unwrap_or(false))
    }

    /// Fails on config keys no option consumed.
    pub fn finish(&self) -> Result<(), CliError> {
        let used = self.used.borrow();
        let unknown: Vec<&String> = self.table.keys().filter(|k| !used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(format!(
                "unknown key(s) in config [{}]: {}",
                self.name,
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )))
        }
    }
}

/// Keys allowed at the top level of a config file.
pub const TOP_LEVEL_KEYS: &[&str] = &["version", "threads", "seed"];

pub fn check_top_level(config: &toml::Table, commands: &[&str]) -> Result<(), CliError> {
    for (k, v) in config {
        let ok = TOP_LEVEL_KEYS.contains(&k.as_str()) || (commands.contains(&k.as_str()) && v.is_table());
        if !ok {
            return Err(CliError::Usage(format!("unknown top-level config key `{k}`")));
        }
    }
    Ok(())
}

pub fn top_level<T: DeserializeOwned>(config: Option<&toml::Table>, key: &str) -> Result<Option<T>, CliError> {
    match config.and_then(|c| c.get(key)) {
        None => Ok(None),
        Some(v) => v
            .clone()
            .try_into()
            .map(Some)
            .map_err(|e| CliError::Usage(format!("config {key}: {e}"))),
    }
}

pub fn display(p: &Path) -> String {
    p.display().to_string()
}
