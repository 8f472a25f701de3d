use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use latlm_core::data::read_manifest;

use crate::errors::CliError;

/// `key=value` config file. Flags override its rows, which override the
/// built-in defaults. Rows named `command`, or prefixed `metric_` or
/// `result_`, are skipped so a run log can be replayed as a config file
/// unchanged; any other key no command flag corresponds to is a usage error.
pub struct FileConfig {
    rows: Vec<(String, String)>,
    recognized: BTreeSet<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
        let rows = match path {
            Some(path) => read_manifest(path)?,
            None => Vec::new(),
        };
        Ok(FileConfig { rows, recognized: BTreeSet::new() })
    }

    /// Parses the last occurrence of `key`, and marks it as recognized.
    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError> {
        self.recognized.insert(key.to_string());
        let Some((_, raw)) = self.rows.iter().rev().find(|(k, _)| k == key) else {
            return Ok(None);
        };
        raw.parse::<T>()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("config value {key}={raw} does not parse")))
    }

    /// Rejects keys that no getter asked about (replay rows excepted).
    pub fn finish(self) -> Result<(), CliError> {
        for (key, _) in &self.rows {
            if key == "command" || key.starts_with("metric_") || key.starts_with("result_") {
                continue;
            }
            if !self.recognized.contains(key) {
                return Err(CliError::Usage(format!("unknown config key {key}")));
            }
        }
        Ok(())
    }
}
