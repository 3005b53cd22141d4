//! Optional JSON config files: a flat object whose keys mirror the command
//! flags. Flag values override file values; unknown keys are rejected with
//! the offending name.

use std::path::Path;

use vsflqr_core::error::{Error, Result};

pub struct ConfigFile {
    values: serde_json::Map<String, serde_json::Value>,
}

impl ConfigFile {
    /// Load and validate against the command's allowed keys. `None` yields
    /// an empty config.
    pub fn load(path: Option<&Path>, allowed: &[&str]) -> Result<ConfigFile> {
        let Some(path) = path else {
            return Ok(ConfigFile {
                values: serde_json::Map::new(),
            });
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                file: path.display().to_string(),
                line: e.line(),
                reason: e.to_string(),
            })?;
        let serde_json::Value::Object(values) = value else {
            return Err(Error::InvalidParam {
                name: "config",
                reason: "config file must hold a JSON object".into(),
            });
        };
        for key in values.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::InvalidParam {
                    name: "config",
                    reason: format!(
                        "unknown key '{key}' (allowed: {})",
                        allowed.join(", ")
                    ),
                });
            }
        }
        Ok(ConfigFile { values })
    }

    fn get(&self, key: &str) -> Option<&serde_json::Value> {
        self.values.get(key)
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| Error::InvalidParam {
                name: "config",
                reason: format!("key '{key}' must be a number"),
            }),
        }
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(|u| Some(u as usize))
                .ok_or_else(|| Error::InvalidParam {
                    name: "config",
                    reason: format!("key '{key}' must be a nonnegative integer"),
                }),
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.as_u64().map(Some).ok_or_else(|| Error::InvalidParam {
                name: "config",
                reason: format!("key '{key}' must be a nonnegative integer"),
            }),
        }
    }

    pub fn get_string(&self, key: &str) -> Result<Option<String>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(|s| Some(s.to_string()))
                .ok_or_else(|| Error::InvalidParam {
                    name: "config",
                    reason: format!("key '{key}' must be a string"),
                }),
        }
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.as_bool().map(Some).ok_or_else(|| Error::InvalidParam {
                name: "config",
                reason: format!("key '{key}' must be a boolean"),
            }),
        }
    }
}
