//! Artifact writing. Every CSV starts with one `#` metadata line, then the
//! header; every JSON report carries the same metadata under `meta`.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
}

pub struct Artifacts {
    dir: PathBuf,
    meta: Meta,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(dir: &Path, command: &'static str, config_bytes: &[u8]) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        let meta = Meta { tool: "qvflab", version: VERSION, command, config_sha256: sha256_hex(config_bytes) };
        Ok(Self { dir: dir.to_path_buf(), meta, written: Vec::new() })
    }

    pub fn csv(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> std::io::Result<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(
            w,
            "# {} {} command={} config_sha256={}",
            self.meta.tool, self.meta.version, self.meta.command, self.meta.config_sha256
        )?;
        body(&mut w)?;
        w.flush()?;
        self.written.push(path);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, report: &T) -> std::io::Result<()> {
        let path = self.dir.join(name);
        let doc = serde_json::json!({ "meta": self.meta, "report": report });
        let mut text = serde_json::to_string_pretty(&doc).map_err(std::io::Error::other)?;
        text.push('\n');
        fs::write(&path, text)?;
        self.written.push(path);
        Ok(())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}
