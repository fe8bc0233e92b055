//! Versioned key-value configuration files (TOML with a top-level
//! `version = 1`).

use std::path::Path;

use super::bin::read_all;
use crate::{Error, Result};

pub const CONFIG_VERSION: i64 = 1;

pub fn parse(text: &str, origin: &Path) -> Result<toml::Table> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| {
            let offset = e.span().map_or(0, |s| s.start as u64);
            Error::malformed(origin, offset, e.message().to_string())
        })?;
    match table.get("version").and_then(toml::Value::as_integer) {
        Some(CONFIG_VERSION) => Ok(table),
        Some(v) => Err(Error::Config(format!(
            "{}: unsupported config version {v}",
            origin.display()
        ))),
        None => Err(Error::Config(format!(
            "{}: missing integer `version` key",
            origin.display()
        ))),
    }
}

pub fn read_file(path: &Path) -> Result<toml::Table> {
    let bytes = read_all(path)?;
    let text = String::from_utf8(bytes).map_err(|e| {
        Error::malformed(path, e.utf8_error().valid_up_to() as u64, "invalid UTF-8")
    })?;
    parse(&text, path)
}
