use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub const VERSION: &str = match option_env!("SIRLAB_GIT_DESCRIBE") {
    Some(v) => v,
    None => concat!("v", env!("CARGO_PKG_VERSION")),
};

/// Provenance of one command invocation, written as `manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub version: String,
    pub started: DateTime<Utc>,
    pub finished: Option<DateTime<Utc>>,
}

impl RunManifest {
    /// Creates a fresh `<command>-<timestamp>-s<seed>` directory under `parent`.
    pub fn start(command: &str, config_path: Option<&Path>, seed: u64, parent: &Path) -> Result<Self> {
        let started = Utc::now();
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        let stem = format!("{command}-{}-s{seed}", started.format("%Y%m%dT%H%M%S%.3f"));
        let output_dir = unique_dir(parent, &stem)?;
        Ok(Self {
            command: command.to_string(),
            config_path: config_path.map(Path::to_path_buf),
            seed,
            output_dir,
            version: VERSION.to_string(),
            started,
            finished: None,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.finished = Some(Utc::now());
        let text = serde_json::to_string_pretty(&self)?;
        fs::write(self.path("manifest.json"), text)?;
        Ok(self.output_dir)
    }
}

fn unique_dir(parent: &Path, stem: &str) -> Result<PathBuf> {
    for n in 0.. {
        let name = if n == 0 { stem.to_string() } else { format!("{stem}-{n}") };
        let dir = parent.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!("directory suffixes are unbounded")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directories_are_unique() {
        let tmp = tempfile::tempdir().unwrap();
        let a = RunManifest::start("gen", None, 3, tmp.path()).unwrap();
        let b = RunManifest::start("gen", None, 3, tmp.path()).unwrap();
        assert_ne!(a.output_dir, b.output_dir);
        let dir = a.finish().unwrap();
        let m: RunManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m.seed, 3);
        assert!(m.finished.unwrap() >= m.started);
    }
}
