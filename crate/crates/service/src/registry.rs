//! Raw scans known to the service, keyed by file stem under `scans/`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use weldqa_core::pgm::read_scan_pgm;
use weldqa_core::RawScan;

pub const SCANS_DIR: &str = "scans";

#[derive(Debug, Clone, Default)]
pub struct ScanRegistry {
    paths: BTreeMap<String, PathBuf>,
}

impl ScanRegistry {
    /// Indexes every `*.pgm` in `<data_dir>/scans`. A missing directory
    /// gives an empty registry.
    pub fn load(data_dir: &Path) -> std::io::Result<Self> {
        let dir = data_dir.join(SCANS_DIR);
        let mut paths = BTreeMap::new();
        if dir.is_dir() {
            for entry in std::fs::read_dir(&dir)? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "pgm") {
                    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                        paths.insert(stem.to_string(), path);
                    }
                }
            }
        }
        Ok(Self { paths })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.paths.contains_key(id)
    }

    /// Ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.paths.keys().map(String::as_str)
    }

    /// The stored file, unmodified.
    pub fn bytes(&self, id: &str) -> Option<std::io::Result<Vec<u8>>> {
        self.paths.get(id).map(std::fs::read)
    }

    pub fn scan(&self, id: &str) -> Option<anyhow::Result<RawScan>> {
        self.bytes(id)
            .map(|b| read_scan_pgm(&b?, id).map_err(|e| anyhow::anyhow!("scan {id}: {e}")))
    }
}
