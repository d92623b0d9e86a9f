//! Video-level stratified folds and the cross-validation driver.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{Mode, RunConfig};
use super::eval::{evaluate, EvalReport};
use super::trainer::{train_one_model, EpochStats, Supervision};
use crate::data::{Clip, Dataset};
use crate::rng::{Rng, Stream};
use crate::swin::SwinModel;
use crate::{Error, Result};

/// Split `(video_id, label)` pairs into `k` disjoint folds, stratified by label.
///
/// Each class is shuffled and dealt round-robin; the dealing position carries
/// over between classes so overall fold sizes also differ by at most one.
pub fn kfold_split(videos: &[(String, usize)], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be >= 2, got {k}")));
    }
    if videos.len() < k {
        return Err(Error::Data(format!("{} videos cannot fill {k} folds", videos.len())));
    }
    let mut rng = Rng::stream(seed, Stream::Folds);
    let mut folds = vec![Vec::new(); k];
    let mut pos = 0;
    let max_label = videos.iter().map(|v| v.1).max().unwrap_or(0);
    for label in 0..=max_label {
        let mut ids: Vec<&String> = videos.iter().filter(|v| v.1 == label).map(|v| &v.0).collect();
        ids.sort();
        rng.shuffle(&mut ids);
        for id in ids {
            folds[pos % k].push(id.clone());
            pos += 1;
        }
    }
    Ok(folds)
}

/// Unweighted mean of fold accuracies.
pub fn averaged_accuracy(folds: &[f64]) -> f64 {
    folds.iter().sum::<f64>() / folds.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_videos: Vec<String>,
    pub report: EvalReport,
    pub history: Vec<EpochStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub mode: Mode,
    pub k: usize,
    /// Mean of the clip-level fold accuracies.
    pub averaged_top1: f64,
    pub averaged_video_top1: f64,
    pub fold_accuracies: Vec<f64>,
    pub folds: Vec<FoldResult>,
}

impl CvSummary {
    /// Mean over folds of a last-epoch history field.
    pub fn final_epoch_mean(&self, f: impl Fn(&EpochStats) -> Option<f64>) -> Option<f64> {
        let vals: Option<Vec<f64>> = self.folds.iter().map(|r| r.history.last().and_then(&f)).collect();
        vals.map(|v| averaged_accuracy(&v))
    }

    /// Mean over folds of a first-epoch history field.
    pub fn first_epoch_mean(&self, f: impl Fn(&EpochStats) -> Option<f64>) -> Option<f64> {
        let vals: Option<Vec<f64>> = self.folds.iter().map(|r| r.history.first().and_then(&f)).collect();
        vals.map(|v| averaged_accuracy(&v))
    }
}

/// Seed of fold `i`, derived from the run seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    Rng::derive_seed(seed, fold as u64)
}

fn run_fold(
    ds: &Dataset,
    cfg: &RunConfig,
    supervision: &Supervision,
    fold: usize,
    test_ids: &[String],
    progress: &(dyn Fn(usize, &EpochStats) + Sync),
) -> Result<FoldResult> {
    let test_set: HashSet<&str> = test_ids.iter().map(String::as_str).collect();
    let (test, train): (Vec<Clip>, Vec<Clip>) = ds
        .clips
        .iter()
        .cloned()
        .partition(|c| test_set.contains(c.video_id.as_str()));
    let mut fold_cfg = cfg.clone();
    fold_cfg.seed = fold_seed(cfg.seed, fold);
    let out = train_one_model(&train, &ds.classes, &fold_cfg, supervision, None, &mut |s| progress(fold, s))?;
    let (backbone, _) = out.split();
    let model = SwinModel::new(cfg.model(ds.classes.len()))?;
    let report = evaluate(&model, &backbone, &ds.classes, &test, &cfg.augment(), cfg.batch_size)?;
    Ok(FoldResult {
        fold,
        test_videos: test_ids.to_vec(),
        report,
        history: out.history,
    })
}

/// Train on k-1 folds and test on the held-out one, for every fold.
/// Up to `jobs` folds run concurrently; results do not depend on `jobs`.
pub fn cross_validate(
    ds: &Dataset,
    cfg: &RunConfig,
    supervision: &Supervision,
    jobs: usize,
    progress: &(dyn Fn(usize, &EpochStats) + Sync),
) -> Result<CvSummary> {
    cfg.validate()?;
    let folds = kfold_split(&ds.videos(), cfg.k, cfg.seed)?;
    let results: Mutex<Vec<Option<Result<FoldResult>>>> = Mutex::new((0..cfg.k).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= cfg.k {
            break;
        }
        let r = run_fold(ds, cfg, supervision, i, &folds[i], progress);
        let failed = r.is_err();
        results.lock().expect("no panics while held")[i] = Some(r);
        if failed {
            // stop handing out new folds
            next.store(cfg.k, Ordering::SeqCst);
        }
    };
    let jobs = jobs.clamp(1, cfg.k);
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(worker);
            }
        });
    }
    let mut out = Vec::with_capacity(cfg.k);
    for r in results.into_inner().expect("workers finished") {
        match r {
            Some(r) => out.push(r?),
            None => continue,
        }
    }
    if out.len() != cfg.k {
        return Err(Error::Data("cross-validation stopped early".into()));
    }
    let fold_accuracies: Vec<f64> = out.iter().map(|f| f.report.top1).collect();
    let video: Vec<f64> = out.iter().map(|f| f.report.video_top1).collect();
    Ok(CvSummary {
        mode: cfg.mode,
        k: cfg.k,
        averaged_top1: averaged_accuracy(&fold_accuracies),
        averaged_video_top1: averaged_accuracy(&video),
        fold_accuracies,
        folds: out,
    })
}
