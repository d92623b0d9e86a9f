//! Clip- and video-level evaluation reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::trainer::{argmax, batch_tensor};
use crate::classes::ClassSet;
use crate::data::{AugmentSpec, Clip};
use crate::rng::Rng;
use crate::swin::{ParamStore, SwinModel};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub num_clips: usize,
    /// Clip-level top-1 accuracy.
    pub top1: f64,
    /// `[truth][prediction]` clip counts.
    pub confusion: Vec<Vec<usize>>,
    pub num_videos: usize,
    /// Top-1 accuracy after a majority vote over each video's clips.
    pub video_top1: f64,
    pub video_confusion: Vec<Vec<usize>>,
    /// Filled by cross-validation summaries.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_fold: Vec<f64>,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    /// Hex SHA-256 of the little-endian f32 logits, when they were available.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub logits_sha256: String,
}

fn confusion(k: usize, pairs: impl Iterator<Item = (usize, usize)>) -> (Vec<Vec<usize>>, f64, usize) {
    let mut m = vec![vec![0; k]; k];
    let mut n = 0;
    for (y, p) in pairs {
        m[y][p] += 1;
        n += 1;
    }
    let trace: usize = (0..k).map(|i| m[i][i]).sum();
    (m, trace as f64 / n.max(1) as f64, n)
}

impl EvalReport {
    /// Build a report from per-clip predictions.
    pub fn from_predictions(
        classes: &ClassSet,
        predictions: &[usize],
        labels: &[usize],
        video_ids: &[&str],
        logits: Option<&[f32]>,
    ) -> Result<Self> {
        let k = classes.len();
        if predictions.is_empty() {
            return Err(Error::Data("empty evaluation set".into()));
        }
        if predictions.len() != labels.len() || labels.len() != video_ids.len() {
            return Err(Error::Data("predictions, labels and video ids differ in length".into()));
        }
        if let Some(bad) = predictions.iter().chain(labels).find(|&&c| c >= k) {
            return Err(Error::Data(format!("class id {bad} out of range for {k} classes")));
        }
        let (clip_m, top1, num_clips) = confusion(k, labels.iter().copied().zip(predictions.iter().copied()));

        // per video: truth label and vote counts, in id order
        let mut votes: BTreeMap<&str, (usize, Vec<usize>)> = BTreeMap::new();
        for ((&id, &y), &p) in video_ids.iter().zip(labels).zip(predictions) {
            let e = votes.entry(id).or_insert_with(|| (y, vec![0; k]));
            if e.0 != y {
                return Err(Error::Data(format!("video {id} has clips with different labels")));
            }
            e.1[p] += 1;
        }
        let (video_m, video_top1, num_videos) = confusion(k, votes.values().map(|(y, v)| (*y, argmax(v))));

        let logits_sha256 = logits
            .map(|l| {
                let mut h = Sha256::new();
                l.iter().for_each(|v| h.update(v.to_le_bytes()));
                h.finalize().iter().map(|b| format!("{b:02x}")).collect()
            })
            .unwrap_or_default();
        Ok(Self {
            classes: classes.names().to_vec(),
            num_clips,
            top1,
            confusion: clip_m,
            num_videos,
            video_top1,
            video_confusion: video_m,
            per_fold: Vec::new(),
            predictions: predictions.to_vec(),
            labels: labels.to_vec(),
            logits_sha256,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    /// Clip-level matrix: header row of predicted classes, one row per true class.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("truth\\pred");
        for c in &self.classes {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            s.push_str(c);
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_confusion_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.confusion_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Eval-path logits `[N, K]` for `clips`, computed in batches.
pub fn predict_logits(
    model: &SwinModel,
    params: &ParamStore<f32>,
    clips: &[Clip],
    spec: &AugmentSpec,
    batch_size: usize,
) -> Result<Vec<f32>> {
    let bound = params.bind(false)?;
    // the eval path draws nothing; the rng only satisfies the signature
    let mut rng = Rng::new(0);
    let mut logits = Vec::with_capacity(clips.len() * model.config().num_classes);
    for chunk in clips.chunks(batch_size.max(1)) {
        let refs: Vec<&Clip> = chunk.iter().collect();
        let x = batch_tensor(&refs, spec, &mut rng, false)?;
        logits.extend_from_slice(model.forward(&bound, &x, false)?.logits.data());
    }
    Ok(logits)
}

/// Evaluate trained backbone parameters on `clips`.
pub fn evaluate(
    model: &SwinModel,
    params: &ParamStore<f32>,
    classes: &ClassSet,
    clips: &[Clip],
    spec: &AugmentSpec,
    batch_size: usize,
) -> Result<EvalReport> {
    if clips.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let logits = predict_logits(model, params, clips, spec, batch_size)?;
    let k = classes.len();
    let predictions: Vec<usize> = logits.chunks_exact(k).map(argmax).collect();
    let labels: Vec<usize> = clips.iter().map(|c| c.label).collect();
    let ids: Vec<&str> = clips.iter().map(|c| c.video_id.as_str()).collect();
    EvalReport::from_predictions(classes, &predictions, &labels, &ids, Some(&logits))
}
