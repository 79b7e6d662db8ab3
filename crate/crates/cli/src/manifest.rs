//! Frame manifests: a JSON array of `{cloud, corners2d, truth?}` entries.
//! Relative paths are resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use ilcc_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub cloud: PathBuf,
    pub corners2d: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Loads the manifest and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let raw: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let mut entries = Vec::with_capacity(raw.len());
        for e in raw {
            let entry = ManifestEntry {
                cloud: resolve(&e.cloud),
                corners2d: resolve(&e.corners2d),
                truth: e.truth.as_deref().map(resolve),
            };
            for p in [Some(&entry.cloud), Some(&entry.corners2d), entry.truth.as_ref()].into_iter().flatten() {
                if !p.is_file() {
                    return Err(Error::Io {
                        path: p.clone(),
                        source: std::io::Error::new(std::io::ErrorKind::NotFound, "file listed in manifest not found"),
                    });
                }
            }
            entries.push(entry);
        }
        if entries.is_empty() {
            return Err(Error::InvalidInput(format!("{}: manifest lists no frames", path.display())));
        }
        Ok(Self { entries })
    }

    pub fn write(entries: &[ManifestEntry], path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(entries).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

/// Frame id from a cloud path: the file stem.
pub fn frame_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
