use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio;
use crate::scene::{IdentityMap, Scene};

/// Ground-truth instance ids per camera, consistent across views.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SupervisionSet {
    pub maps: BTreeMap<u32, IdentityMap>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    maps: BTreeMap<u32, String>,
}

impl SupervisionSet {
    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// Largest id present, i.e. K.
    pub fn num_instances(&self) -> usize {
        self.maps.values().map(|m| m.max_id()).max().unwrap_or(0) as usize
    }

    /// Checks every map against the scene's cameras.
    pub fn validate(&self, scene: &Scene) -> Result<()> {
        for (&id, map) in &self.maps {
            let cam = scene.camera(id)?;
            if map.width != cam.width as usize || map.height != cam.height as usize {
                return Err(Error::dim(format!(
                    "supervision for camera {id} is {}x{}, camera is {}x{}",
                    map.width, map.height, cam.width, cam.height
                )));
            }
        }
        Ok(())
    }

    /// Writes one 16-bit PNG per camera plus `manifest.json` in `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Manifest {
            maps: BTreeMap::new(),
        };
        for (&id, map) in &self.maps {
            let name = format!("ids_{id:04}.png");
            imageio::write_identity_map(map, &dir.join(&name))?;
            manifest.maps.insert(id, name);
        }
        let path = dir.join("manifest.json");
        let text =
            serde_json::to_string_pretty(&manifest).map_err(|e| Error::Internal(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Reads a manifest; map paths are relative to the manifest's directory.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::input(format!("{}: {e}", manifest_path.display())))?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut maps = BTreeMap::new();
        for (id, file) in manifest.maps {
            maps.insert(id, imageio::read_identity_map(&base.join(file))?);
        }
        Ok(Self { maps })
    }
}
