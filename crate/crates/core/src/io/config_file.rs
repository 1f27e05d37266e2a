//! Flat `key = value` config files. `#` starts a comment; blank lines are
//! ignored. Every [`TrainConfig`] field must be present exactly once.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pipeline::config::{TrainConfig, CONFIG_KEYS};

pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected `key = value`, found {content:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let Some(&known) = CONFIG_KEYS.iter().find(|k| **k == key) else {
            return Err(Error::UnknownKey {
                key: key.to_string(),
                line,
            });
        };
        if let Some(first) = seen.insert(known, line) {
            return Err(Error::Config {
                line,
                message: format!("duplicate key `{key}` (first set on line {first})"),
            });
        }
        cfg.set(known, value)
            .map_err(|message| Error::Config { line, message })?;
    }
    let missing: Vec<String> = CONFIG_KEYS
        .iter()
        .filter(|k| !seen.contains_key(*k))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingKeys(missing));
    }
    Ok(cfg)
}

/// Canonical text form: one `key = value` line per field, in key order.
pub fn render_config(cfg: &TrainConfig) -> String {
    cfg.to_pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Parses and validates a config file.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg = parse_config(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_config(cfg: &TrainConfig, path: &Path) -> Result<()> {
    fs::write(path, render_config(cfg)).map_err(|e| Error::io(path, e))
}
