//! `--config` file handling and the `run.json` echo.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::CliError;

/// Values from an optional TOML file. Command-line flags take precedence.
#[derive(Debug, Default)]
pub struct FileConfig {
    table: Table,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let table = text
            .parse::<Table>()
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        Ok(FileConfig { table })
    }

    /// `flag`, else the top-level key `key`, else `default`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.table.get(key) {
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| CliError::Usage(format!("config key {key}: {e}"))),
            None => Ok(default),
        }
    }

    /// `base` with the fields of table `[section]` laid over it.
    pub fn overlay<T: Serialize + DeserializeOwned>(&self, section: &str, base: T) -> Result<T, CliError> {
        let Some(Value::Table(over)) = self.table.get(section) else {
            return Ok(base);
        };
        let mut merged = Value::try_from(&base).map_err(|e| CliError::Usage(e.to_string()))?;
        merge(&mut merged, over);
        merged
            .try_into()
            .map_err(|e| CliError::Usage(format!("config section [{section}]: {e}")))
    }
}

fn merge(into: &mut Value, over: &Table) {
    if let Value::Table(t) = into {
        for (k, v) in over {
            match (t.get_mut(k), v) {
                (Some(dst @ Value::Table(_)), Value::Table(src)) => merge(dst, src),
                _ => {
                    t.insert(k.clone(), v.clone());
                }
            }
        }
    }
}

/// Writes every resolved setting to `<dir>/run.json`.
pub fn write_run_json(dir: &Path, command: &str, resolved: serde_json::Value) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| sparsepat::Error::io(format!("creating {}", dir.display()), e))?;
    let doc = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "settings": resolved,
    });
    let text = serde_json::to_string_pretty(&doc).expect("json values always serialize");
    fs::write(dir.join("run.json"), text + "\n").map_err(|e| sparsepat::Error::io("writing run.json", e))?;
    Ok(())
}
