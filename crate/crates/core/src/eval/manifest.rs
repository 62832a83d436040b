//! Benchmark manifest: scene, cameras, classifier and query cases with
//! per-camera ground-truth mask PNGs. Relative paths resolve against the
//! manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::QueryCase;
use crate::error::{Error, Result};
use crate::imageio;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaseEntry {
    pub query: String,
    pub gt_masks: BTreeMap<u32, String>,
    pub oracle_id: Option<u16>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub scene: String,
    pub cameras: String,
    pub classifier: String,
    pub cases: Vec<CaseEntry>,
    /// Supervision manifest of ground-truth id maps for the oracle backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_idmaps: Option<String>,
    #[serde(skip)]
    base: PathBuf,
}

impl BenchmarkManifest {
    pub fn new(scene: String, cameras: String, classifier: String) -> Self {
        Self {
            scene,
            cameras,
            classifier,
            cases: Vec::new(),
            oracle_idmaps: None,
            base: PathBuf::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: BenchmarkManifest = serde_json::from_str(&text)
            .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        m.base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Reads every case with its mask PNGs.
    pub fn load_cases(&self) -> Result<Vec<QueryCase>> {
        self.cases
            .iter()
            .map(|c| {
                let gt_masks = c
                    .gt_masks
                    .iter()
                    .map(|(&cam, file)| Ok((cam, imageio::read_mask(&self.resolve(file))?)))
                    .collect::<Result<_>>()?;
                Ok(QueryCase {
                    query: c.query.clone(),
                    gt_masks,
                    oracle_id: c.oracle_id,
                })
            })
            .collect()
    }

    /// Writes each case's masks to `manifest_dir/subdir/case_XX_cam_YYYY.png`
    /// and records them relative to `manifest_dir`.
    pub fn add_cases(&mut self, manifest_dir: &Path, subdir: &str, cases: &[QueryCase]) -> Result<()> {
        let dir = manifest_dir.join(subdir);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let start = self.cases.len();
        for (i, case) in cases.iter().enumerate() {
            let mut gt_masks = BTreeMap::new();
            for (&cam, mask) in &case.gt_masks {
                let name = format!("case_{:02}_cam_{cam:04}.png", start + i);
                imageio::write_mask(mask, &dir.join(&name))?;
                gt_masks.insert(cam, format!("{subdir}/{name}"));
            }
            self.cases.push(CaseEntry {
                query: case.query.clone(),
                gt_masks,
                oracle_id: case.oracle_id,
            });
        }
        Ok(())
    }
}
