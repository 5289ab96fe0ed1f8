//! On-disk datasets: frame folders per clip, mask folders per subject, a pose
//! sidecar per clip, and a JSON-lines manifest with one subject per line.
//!
//! ```text
//! root/manifest.jsonl
//! root/clips/<clip_id>/frames/00000.png ...
//! root/clips/<clip_id>/pose.json
//! root/clips/<clip_id>/masks/<category>/00000.png ...
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Category, Scene, SubjectRecord, SubjectStats};
use crate::frames::{load_clip_folder, load_mask_folder, save_clip_folder, save_mask_folder};
use crate::pose::PoseSequence;
use crate::video::VideoClip;
use crate::{Error, Result};

/// One manifest line; paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestLine {
    pub clip_id: String,
    pub category: Category,
    pub frames: PathBuf,
    pub mask: PathBuf,
    pub pose: Option<PathBuf>,
    pub stats: SubjectStats,
}

impl ManifestLine {
    pub fn from_record(r: &SubjectRecord) -> Self {
        let clip = PathBuf::from("clips").join(&r.clip_id);
        Self {
            clip_id: r.clip_id.clone(),
            category: r.category,
            frames: clip.join("frames"),
            mask: clip.join("masks").join(r.category.name()),
            pose: r.pose.as_ref().map(|_| clip.join("pose.json")),
            stats: r.stats,
        }
    }
}

/// A manifest line resolved against its dataset root.
#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub root: PathBuf,
    pub line: ManifestLine,
}

impl DatasetEntry {
    pub fn load_clip(&self) -> Result<VideoClip> {
        load_clip_folder(self.root.join(&self.line.frames))
    }

    pub fn load_record(&self) -> Result<SubjectRecord> {
        let mask = load_mask_folder(self.root.join(&self.line.mask))?;
        let pose = match &self.line.pose {
            Some(p) => Some(PoseSequence::load_json(self.root.join(p))?),
            None => None,
        };
        Ok(SubjectRecord {
            clip_id: self.line.clip_id.clone(),
            category: self.line.category,
            mask,
            pose,
            stats: self.line.stats,
        })
    }
}

/// Writes scenes under `root` and returns the manifest lines in write order.
pub fn write_dataset(root: impl AsRef<Path>, scenes: &[Scene]) -> Result<Vec<ManifestLine>> {
    let root = root.as_ref();
    let mut lines = Vec::new();
    for scene in scenes {
        let dir = root.join("clips").join(&scene.clip_id);
        save_clip_folder(dir.join("frames"), &scene.clip)?;
        scene.pose.save_json(dir.join("pose.json"))?;
        for r in &scene.records {
            let line = ManifestLine::from_record(r);
            save_mask_folder(root.join(&line.mask), &r.mask)?;
            lines.push(line);
        }
    }
    save_manifest(root.join("manifest.jsonl"), &lines)?;
    Ok(lines)
}

pub fn save_manifest(path: impl AsRef<Path>, lines: &[ManifestLine]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for l in lines {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a manifest; blank lines are skipped.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<DatasetEntry>> {
    let path = path.as_ref();
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidValue(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(DatasetEntry {
            root: root.clone(),
            line: parsed,
        });
    }
    Ok(out)
}
