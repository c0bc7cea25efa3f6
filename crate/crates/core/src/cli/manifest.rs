use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::Artifact;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const TMP_SUFFIX: &str = ".tmp";

/// Everything needed to re-execute a run: the subcommand and its fully
/// materialized config. Timestamps and the output list are bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub artifact_version: String,
    pub dataset_format: u32,
    pub checkpoint_format: String,
    pub subcommand: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub started_at: String,
    #[serde(default)]
    pub finished_at: Option<String>,
    #[serde(default)]
    pub wall_time_s: Option<f64>,
    /// Output files relative to the manifest's directory, manifest last.
    #[serde(default)]
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            artifact_version: env!("CARGO_PKG_VERSION").into(),
            dataset_format: crate::datagen::FORMAT_VERSION,
            checkpoint_format: crate::models::CHECKPOINT_FORMAT.into(),
            subcommand: subcommand.into(),
            seed,
            config,
            started_at: now(),
            finished_at: None,
            wall_time_s: None,
            outputs: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn tmp_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}{TMP_SUFFIX}"))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// A run's output directory. Files are only ever visible under their
/// final names once complete: everything is written with a temp suffix
/// and renamed at the end; on failure the temp files are removed.
pub struct OutputDir {
    dir: PathBuf,
    pending: Vec<PathBuf>,
}

impl OutputDir {
    /// Create the directory and write the provisional manifest.
    pub fn begin(dir: &Path, manifest: &RunManifest) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut out = OutputDir {
            dir: dir.to_path_buf(),
            pending: Vec::new(),
        };
        let tmp = tmp_path(dir, MANIFEST_NAME);
        out.pending.push(tmp.clone());
        if let Err(e) = write(&tmp, &serde_json::to_vec_pretty(manifest)?) {
            out.abort();
            return Err(e);
        }
        Ok(out)
    }

    /// Write all artifacts and the final manifest, then publish them.
    pub fn commit(mut self, mut manifest: RunManifest, artifacts: &[Artifact], wall_time_s: f64) -> Result<RunManifest> {
        let res = (|| {
            for a in artifacts {
                if a.name == MANIFEST_NAME || a.name.contains(['/', '\\']) {
                    return Err(Error::Config(format!("invalid artifact name {}", a.name)));
                }
                let tmp = tmp_path(&self.dir, &a.name);
                self.pending.push(tmp.clone());
                write(&tmp, &a.bytes)?;
            }
            manifest.outputs = artifacts.iter().map(|a| a.name.clone()).collect();
            manifest.outputs.push(MANIFEST_NAME.into());
            manifest.finished_at = Some(now());
            manifest.wall_time_s = Some(wall_time_s);
            let mut bytes = serde_json::to_vec_pretty(&manifest)?;
            bytes.push(b'\n');
            write(&tmp_path(&self.dir, MANIFEST_NAME), &bytes)?;
            // artifacts first, manifest last: a visible manifest implies
            // every listed output is in place
            for name in &manifest.outputs {
                let (from, to) = (tmp_path(&self.dir, name), self.dir.join(name));
                fs::rename(&from, &to).map_err(|e| Error::io(&to, e))?;
            }
            Ok(())
        })();
        match res {
            Ok(()) => {
                self.pending.clear();
                Ok(manifest)
            }
            Err(e) => {
                self.abort();
                Err(e)
            }
        }
    }

    /// Remove every temp file written so far.
    pub fn abort(&mut self) {
        for p in self.pending.drain(..) {
            let _ = fs::remove_file(p);
        }
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        self.abort();
    }
}
