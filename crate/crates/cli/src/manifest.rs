//! Provenance record written next to every command's outputs.
//!
//! Manifests carry no timestamps or absolute output paths, so an identical
//! rerun produces an identical manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::Seeds;

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config_sha256: String,
    pub seeds: Seeds,
    pub parameters: BTreeMap<String, Value>,
    pub inputs: Vec<FileDigest>,
    /// Output files, named relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub counts: BTreeMap<String, Value>,
}

impl Manifest {
    pub fn new(command: &str, config_sha256: String, seeds: Seeds) -> Self {
        Manifest {
            command: command.to_string(),
            status: "running".into(),
            error: None,
            config_sha256,
            seeds,
            parameters: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            counts: BTreeMap::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        self.parameters.insert(
            key.to_string(),
            serde_json::to_value(value).expect("parameter serializes"),
        );
    }

    pub fn count(&mut self, key: &str, value: impl Serialize) {
        self.counts
            .insert(key.to_string(), serde_json::to_value(value).expect("count serializes"));
    }

    pub fn input(&mut self, path: &Path) -> io::Result<()> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn output(&mut self, dir: &Path, path: &Path) -> io::Result<()> {
        let name = path.strip_prefix(dir).unwrap_or(path);
        self.outputs.push(FileDigest {
            path: name.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(FILE_NAME);
        let mut file = File::create(&path)?;
        serde_json::to_writer_pretty(&mut file, self)?;
        file.write_all(b"\n")?;
        Ok(path)
    }
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    io::copy(&mut BufReader::new(File::open(path)?), &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outputs_are_named_relative_to_the_directory() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("items.jsonl");
        std::fs::write(&file, "abc").unwrap();
        let mut m = Manifest::new("ingest", "h".into(), Seeds::default());
        m.output(dir.path(), &file).unwrap();
        assert_eq!(m.outputs[0].path, "items.jsonl");
        assert_eq!(
            m.outputs[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trips_as_json() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new("simulate", "h".into(), Seeds::default());
        m.count("cells", 3);
        m.status = "success".into();
        let path = m.write(dir.path()).unwrap();
        let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(v["counts"]["cells"], 3);
        assert_eq!(v["status"], "success");
        assert!(v.get("error").is_none());
    }
}
