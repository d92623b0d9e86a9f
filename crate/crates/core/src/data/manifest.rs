//! Newline-delimited JSON manifests and clip loading.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::video::{crop_with_boxes, segment_clips, BBox, Video};
use super::vtf::read_tensor_file;
use crate::classes::ClassSet;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub video_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub tensor_path: String,
    pub label_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<BBox>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub frames: Video,
    pub label: usize,
    pub video_id: String,
    pub clip_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: ClassSet,
    pub clips: Vec<Clip>,
}

impl Dataset {
    /// Distinct video ids with their label, in first-seen order.
    pub fn videos(&self) -> Vec<(String, usize)> {
        let mut seen = HashSet::new();
        self.clips
            .iter()
            .filter(|c| seen.insert(c.video_id.as_str()))
            .map(|c| (c.video_id.clone(), c.label))
            .collect()
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if !ids.insert(r.video_id.clone()) {
            return Err(Error::Data(format!("duplicate video_id {}", r.video_id)));
        }
        records.push(r);
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[Record]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Read, crop and segment every record; labels are mapped through `classes`.
pub fn load_records(records: &[Record], base: &Path, classes: &ClassSet, clip_len: usize) -> Result<Vec<Clip>> {
    let mut clips = Vec::new();
    for r in records {
        let label = classes.id(&r.label_name)?;
        let video = Video::from_array(&read_tensor_file(&resolve(base, &r.tensor_path))?)
            .map_err(|e| Error::Data(format!("{}: {e}", r.video_id)))?;
        let video = match &r.boxes {
            Some(b) => crop_with_boxes(&video, b).map_err(|e| Error::Data(format!("{}: {e}", r.video_id)))?,
            None => video,
        };
        for (clip_index, frames) in segment_clips(&video, clip_len).into_iter().enumerate() {
            clips.push(Clip {
                frames,
                label,
                video_id: r.video_id.clone(),
                clip_index,
            });
        }
    }
    Ok(clips)
}

/// Load a manifest, deriving the class set from its labels.
pub fn load_manifest(path: &Path, clip_len: usize) -> Result<Dataset> {
    let records = read_manifest(path)?;
    let classes = ClassSet::from_labels(records.iter().map(|r| r.label_name.as_str()))?;
    load_manifest_with(path, &records, classes, clip_len)
}

/// Load a manifest against a fixed class set, e.g. the one a checkpoint was trained on.
pub fn load_manifest_for(path: &Path, classes: &ClassSet, clip_len: usize) -> Result<Dataset> {
    let records = read_manifest(path)?;
    load_manifest_with(path, &records, classes.clone(), clip_len)
}

fn load_manifest_with(path: &Path, records: &[Record], classes: ClassSet, clip_len: usize) -> Result<Dataset> {
    let base = path.parent().unwrap_or(Path::new("."));
    let clips = load_records(records, base, &classes, clip_len)?;
    Ok(Dataset { classes, clips })
}
