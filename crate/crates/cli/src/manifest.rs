use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

/// What a command produced, written last so its presence marks success.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub config_snapshot: String,
    pub artifacts: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, out_dir: &Path, seed: u64, config_snapshot: String) -> Self {
        RunManifest { command: command.into(), out_dir: out_dir.into(), seed, config_snapshot, artifacts: vec![] }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "tool = modnet {}", env!("CARGO_PKG_VERSION")).unwrap();
        writeln!(s, "command = {}", self.command).unwrap();
        writeln!(s, "out_dir = {}", self.out_dir.display()).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        for a in &self.artifacts {
            writeln!(s, "artifact = {}", a.display()).unwrap();
        }
        s.push_str("\n[config]\n");
        s.push_str(&self.config_snapshot);
        s
    }

    /// Checks every listed artifact exists, then writes the manifest.
    pub fn write(&mut self) -> Result<PathBuf> {
        let mut seen = std::collections::BTreeSet::new();
        self.artifacts.retain(|p| seen.insert(p.clone()));
        for a in &self.artifacts {
            if !a.is_file() {
                bail!("artifact {} was not written", a.display());
            }
        }
        let path = self.out_dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_text()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
