//! Named target structures.
//!
//! A small curated set ships inside the binary. A directory of `<name>.json`
//! block-list files can extend or override it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use blockwork_core::world::{parse_blocks, WorldState};

use crate::ServerError;

const BUNDLED: &[(&str, &str)] = &[
    ("arch", include_str!("../targets/arch.json")),
    ("blue-diagonal", include_str!("../targets/blue-diagonal.json")),
    ("corner-diagonals", include_str!("../targets/corner-diagonals.json")),
    ("green-column", include_str!("../targets/green-column.json")),
    ("lifted-red", include_str!("../targets/lifted-red.json")),
    ("red-yellow-stack", include_str!("../targets/red-yellow-stack.json")),
];

#[derive(Debug, Clone, Default)]
pub struct TargetLibrary {
    targets: BTreeMap<String, WorldState>,
}

impl TargetLibrary {
    pub fn bundled() -> Self {
        let targets = BUNDLED
            .iter()
            .map(|(name, text)| {
                let world = parse_blocks(text.trim()).expect("bundled targets are valid");
                (name.to_string(), world)
            })
            .collect();
        TargetLibrary { targets }
    }

    /// Adds every `*.json` file in `dir`, keyed by file stem.
    pub fn extend_from_dir(&mut self, dir: &Path) -> Result<(), ServerError> {
        let entries = fs::read_dir(dir).map_err(|e| ServerError::Io(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| ServerError::Io(e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Some(name) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = fs::read_to_string(&path).map_err(|e| ServerError::Io(format!("{}: {e}", path.display())))?;
            let world = parse_blocks(text.trim())
                .map_err(|e| ServerError::InvalidConfig(format!("target {}: {e}", path.display())))?;
            self.targets.insert(name.to_string(), world);
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&WorldState, ServerError> {
        self.targets
            .get(name)
            .ok_or_else(|| ServerError::UnknownTarget(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.targets.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}
