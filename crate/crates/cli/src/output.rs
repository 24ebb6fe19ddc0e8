//! Artifact serialization. Every file carries the tool version and the
//! resolved configuration; files appear only once complete.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::config::RunConfig;
use crate::{CliError, Command, VERSION};

pub enum Artifact {
    Json { name: String, value: Value },
    /// CSV body without the metadata header.
    Csv { name: String, body: String },
}

impl Artifact {
    pub fn json(name: &str, value: impl serde::Serialize) -> Result<Self, CliError> {
        let value = serde_json::to_value(value).map_err(|e| CliError::Io(e.to_string()))?;
        Ok(Artifact::Json { name: name.to_owned(), value })
    }

    pub fn csv(name: &str, body: String) -> Self {
        Artifact::Csv { name: name.to_owned(), body }
    }

    pub fn name(&self) -> &str {
        match self {
            Artifact::Json { name, .. } | Artifact::Csv { name, .. } => name,
        }
    }
}

pub struct Header {
    command: Command,
    config: Value,
}

impl Header {
    /// The output directory is left out so runs into different directories agree byte for byte.
    pub fn new(command: Command, cfg: &RunConfig) -> Self {
        let mut config = cfg.to_value();
        if let Value::Object(m) = &mut config {
            m.remove("out");
        }
        Header { command, config }
    }

    /// The resolved configuration alone, loadable with `--config`.
    pub fn replay_config(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.config).expect("config serializes");
        s.push('\n');
        s
    }

    fn json(&self, body: Value) -> Value {
        let mut map = Map::new();
        map.insert("tool".into(), Value::String("divkern".into()));
        map.insert("version".into(), Value::String(VERSION.into()));
        map.insert("command".into(), Value::String(self.command.name().into()));
        map.insert("config".into(), self.config.clone());
        match body {
            Value::Object(fields) => {
                for (k, v) in fields {
                    map.insert(k, v);
                }
            }
            other => {
                map.insert("result".into(), other);
            }
        }
        Value::Object(map)
    }

    fn csv_preamble(&self) -> String {
        format!(
            "# tool: divkern {VERSION}\n# command: {}\n# config: {}\n",
            self.command.name(),
            serde_json::to_string(&self.config).expect("config serializes")
        )
    }

    pub fn render(&self, artifact: &Artifact) -> String {
        match artifact {
            Artifact::Json { value, .. } => {
                let mut s = serde_json::to_string_pretty(&self.json(value.clone())).expect("json serializes");
                s.push('\n');
                s
            }
            Artifact::Csv { body, .. } => format!("{}{body}", self.csv_preamble()),
        }
    }
}

fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.partial"));
    fs::write(&tmp, contents).map_err(|e| CliError::Io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, &target).map_err(|e| CliError::Io(format!("{}: {e}", target.display())))?;
    Ok(target)
}

pub fn write_all(dir: &Path, header: &Header, artifacts: &[Artifact]) -> Result<Vec<PathBuf>, CliError> {
    let mut rendered: Vec<(String, String)> =
        artifacts.iter().map(|a| (a.name().to_owned(), header.render(a))).collect();
    rendered.push(("resolved_config.json".into(), header.replay_config()));
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    rendered.iter().map(|(name, text)| write_atomic(dir, name, text)).collect()
}

pub fn write_error(dir: &Path, header: &Header, err: &CliError) -> Result<PathBuf, CliError> {
    let body = serde_json::json!({ "error": { "name": err.name(), "message": err.to_string() } });
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let text = header.render(&Artifact::Json { name: "error.json".into(), value: body });
    write_atomic(dir, "error.json", &text)
}
