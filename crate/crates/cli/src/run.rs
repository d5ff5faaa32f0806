use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde_json::{Map, Value};

use crate::Failure;

/// Output directory of one command with its manifest and log.
///
/// The manifest holds the argument vector, the fully resolved configs and
/// the results worth replaying against; it has no timestamps, so identical
/// invocations write identical manifests.
pub struct Run {
    dir: PathBuf,
    manifest: Map<String, Value>,
    log: String,
    outputs: Vec<String>,
}

impl Run {
    pub fn start(command: &str, dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(Failure::data)?;
        let mut manifest = Map::new();
        manifest.insert("command".into(), command.into());
        let argv: Vec<Value> = std::env::args().skip(1).map(Value::from).collect();
        manifest.insert("argv".into(), argv.into());
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            log: String::new(),
            outputs: Vec::new(),
        })
    }

    pub fn record(&mut self, key: &str, value: impl serde::Serialize) {
        let value = serde_json::to_value(value).expect("manifest values serialize");
        self.manifest.insert(key.into(), value);
    }

    /// Prints a line and keeps it for the log file.
    pub fn say(&mut self, line: impl AsRef<str>) {
        println!("{}", line.as_ref());
        self.log.push_str(line.as_ref());
        self.log.push('\n');
    }

    /// Writes an output file under the run directory.
    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, Failure> {
        let path = self.dir.join(name);
        fs::write(&path, contents)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::data)?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn finish(mut self) -> Result<(), Failure> {
        let outputs: Vec<Value> = self.outputs.drain(..).map(Value::from).collect();
        self.manifest.insert("outputs".into(), outputs.into());
        let text = serde_json::to_string_pretty(&Value::Object(self.manifest))
            .expect("manifest serializes");
        let manifest = self.dir.join("run.json");
        fs::write(&manifest, text + "\n")
            .with_context(|| format!("writing {}", manifest.display()))
            .map_err(Failure::data)?;
        let log = self.dir.join("log.txt");
        fs::write(&log, &self.log)
            .with_context(|| format!("writing {}", log.display()))
            .map_err(Failure::data)
    }
}
