use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::sha256_hex;

/// One clip: audio, mouth ROI frames and face crops from a source video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub audio_path: PathBuf,
    pub roi_dir: PathBuf,
    pub face_dir: PathBuf,
    pub video_id: String,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
    by_video: BTreeMap<String, Vec<usize>>,
    digest: String,
}

impl Manifest {
    /// Builds a manifest from entries whose paths are already resolved.
    pub fn from_entries(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.clip_id.as_str()) {
                return Err(Error::DuplicateId(e.clip_id.clone()));
            }
        }
        let mut by_video: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            by_video.entry(e.video_id.clone()).or_default().push(i);
        }
        let canonical: Vec<_> = entries
            .iter()
            .map(|e| (&e.clip_id, &e.video_id))
            .collect();
        let digest = sha256_hex(&serde_json::to_vec(&canonical).expect("ids serialize"));
        Ok(Self {
            entries,
            by_video,
            digest,
        })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry indices per video, in manifest order; videos sorted by id.
    pub fn videos(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.by_video
    }

    /// Hash of the clip and video ids, independent of where media lives.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Keeps only the clips whose video passes `keep`.
    pub fn filter_videos(&self, keep: impl Fn(&str) -> bool) -> Result<Self> {
        Self::from_entries(
            self.entries
                .iter()
                .filter(|e| keep(&e.video_id))
                .cloned()
                .collect(),
        )
    }
}

/// Reads a JSON Lines manifest; relative paths resolve against the
/// manifest's directory. Blank lines are skipped.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut e: ManifestEntry = serde_json::from_str(line)
            .map_err(|err| Error::Parse(format!("{} line {}: {err}", path.display(), i + 1)))?;
        for p in [&mut e.audio_path, &mut e.roi_dir, &mut e.face_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        entries.push(e);
    }
    let manifest = Manifest::from_entries(entries)?;
    let missing: Vec<PathBuf> = manifest
        .entries
        .iter()
        .flat_map(|e| {
            [
                (&e.audio_path, false),
                (&e.roi_dir, true),
                (&e.face_dir, true),
            ]
        })
        .filter(|(p, dir)| if *dir { !p.is_dir() } else { !p.is_file() })
        .map(|(p, _)| p.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingAsset(missing));
    }
    Ok(manifest)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("entry serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
