use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;

use crate::Failure;

/// `report.json`: the command, its effective settings, the fully resolved
/// configuration and the result.
#[derive(Serialize)]
pub struct Report<'a, S, R> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub settings: &'a S,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolved_config: Option<&'a str>,
    pub result: &'a R,
}

impl<'a, S: Serialize, R: Serialize> Report<'a, S, R> {
    pub fn new(command: &'static str, settings: &'a S, resolved_config: Option<&'a str>, result: &'a R) -> Self {
        Report {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            settings,
            resolved_config,
            result,
        }
    }

    pub fn to_json(&self) -> Result<String, Failure> {
        serde_json::to_string_pretty(self)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| Failure::Internal(anyhow::Error::new(e).context("serializing report")))
    }
}

/// Writes `files` into `dir`, creating it if needed.
pub fn write_all(dir: Option<&Path>, files: &[(&str, String)]) -> Result<(), Failure> {
    let Some(dir) = dir else {
        return Ok(());
    };
    let write = || -> anyhow::Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, contents) in files {
            let path = dir.join(name);
            fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    };
    write().map_err(Failure::Input)
}
