//! `langswin` command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or config error, 3 numeric
//! failure. Every error prints one `error kind=<kind> msg=<text>` line on
//! standard error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use langswin::data::{load_manifest, load_manifest_for, Dataset, SynthDatasetSpec, Video};
use langswin::rng::Rng;
use langswin::swin::SwinModel;
use langswin::tensor::Tensor;
use langswin::train::{
    batch_tensor, cross_validate, evaluate, load_checkpoint, load_checkpoint_for, save_checkpoint, train_one_model, Checkpoint,
    RunConfig, Supervision,
};
use langswin::viz::{attention_mask, overlay_and_export, NormMode};
use langswin::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "langswin", version, about = "Video Swin action recognition with language-assisted training")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// JSON run config; missing keys take the preset defaults.
    #[arg(long)]
    config: PathBuf,
    /// Output directory [default: $OUT_DIR or "out"].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Folds trained concurrently by `cv`.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Dotted-key overrides, e.g. `epochs=4,data.clip_len=8`. Repeatable.
    #[arg(long)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Write the synthetic dataset next to `data.manifest`.
    GenData(Common),
    /// Train on the whole manifest; writes a checkpoint and the epoch history.
    Train(Common),
    /// Evaluate a checkpoint; writes a JSON report and a confusion CSV.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate [default: <out>/model.ckpt].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// k-fold cross-validation; writes a summary JSON with per-fold reports.
    Cv(Common),
    /// Export attention overlays (PPM frames plus a JSON sidecar) per clip.
    Viz {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to visualize [default: <out>/model.ckpt].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of clips to export, from the start of the manifest.
        #[arg(long, default_value_t = 1)]
        clips: usize,
    },
}

fn fail(kind: &str, msg: &str) {
    eprintln!("error kind={kind} msg={}", msg.replace('\n', " "));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            fail("usage", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(1);
        }
    };
    match run(cli.verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            fail(e.kind(), &e.to_string());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Split on commas that are not inside brackets or braces.
fn split_overrides(raw: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for s in raw {
        let mut depth = 0i32;
        let mut cur = String::new();
        for ch in s.chars() {
            match ch {
                '[' | '{' => depth += 1,
                ']' | '}' => depth -= 1,
                ',' if depth == 0 => {
                    out.push(std::mem::take(&mut cur));
                    continue;
                }
                _ => {}
            }
            cur.push(ch);
        }
        out.push(cur);
    }
    out.into_iter().filter(|s| !s.trim().is_empty()).collect()
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn apply_override(cfg: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
    let mut slot = &mut *cfg;
    for part in key.trim().split('.') {
        slot = slot
            .get_mut(part)
            .ok_or_else(|| Error::Config(format!("override key {key:?} does not exist")))?;
    }
    *slot = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    Ok(())
}

/// Preset defaults, then the config file, then overrides, then `--seed`.
fn resolve(common: &Common) -> Result<RunConfig> {
    let text = std::fs::read_to_string(&common.config).map_err(|e| Error::io(&common.config, e))?;
    let file: Value = serde_json::from_str(&text)?;
    let base = match file.get("preset").and_then(Value::as_str) {
        Some("paper") => RunConfig::paper(),
        _ => RunConfig::tiny(),
    };
    let mut cfg = serde_json::to_value(base)?;
    merge(&mut cfg, file);
    for item in split_overrides(&common.overrides) {
        apply_override(&mut cfg, &item)?;
    }
    let mut cfg: RunConfig = serde_json::from_value(cfg).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os("OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Resolve the config, create the output directory and record the resolved config.
fn prepare(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let cfg = resolve(common)?;
    let out = out_dir(common);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_json(&out.join("resolved_config.json"), &cfg)?;
    Ok((cfg, out))
}

fn run(verb: Verb) -> Result<()> {
    match verb {
        Verb::GenData(c) => gen_data(&c),
        Verb::Train(c) => train(&c),
        Verb::Eval { common, checkpoint } => eval(&common, checkpoint),
        Verb::Cv(c) => cv(&c),
        Verb::Viz {
            common,
            checkpoint,
            clips,
        } => viz(&common, checkpoint, clips),
    }
}

fn gen_data(common: &Common) -> Result<()> {
    let (cfg, _) = prepare(common)?;
    let manifest = Path::new(&cfg.data.manifest);
    if manifest.file_name().and_then(|n| n.to_str()) != Some("manifest.jsonl") {
        return Err(Error::Config(format!(
            "gen-data writes manifest.jsonl; data.manifest is {:?}",
            cfg.data.manifest
        )));
    }
    let dir = manifest.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let spec: &SynthDatasetSpec = &cfg.data.synth;
    let records = spec.write(dir, cfg.seed)?;
    println!("wrote {} videos to {}", records.len(), dir.display());
    Ok(())
}

fn train(common: &Common) -> Result<()> {
    let (cfg, out) = prepare(common)?;
    let ds = load_manifest(Path::new(&cfg.data.manifest), cfg.data.clip_len)?;
    let supervision = Supervision::for_config(&cfg, &ds.classes)?;
    let model = cfg.model(ds.classes.len());
    let init = if cfg.init_checkpoint.is_empty() {
        None
    } else {
        Some(load_checkpoint_for(Path::new(&cfg.init_checkpoint), &model)?.backbone)
    };
    let result = train_one_model(&ds.clips, &ds.classes, &cfg, &supervision, init.as_ref(), &mut |s| {
        println!("{}", s.line())
    })?;
    let (backbone, aux) = result.split();
    let ck = Checkpoint {
        model,
        run: cfg,
        classes: ds.classes,
        backbone,
        aux,
        optimizer: Some(result.optimizer),
    };
    save_checkpoint(&out.join("model.ckpt"), &ck, false)?;
    save_checkpoint(&out.join("model.inference.ckpt"), &ck, true)?;
    write_json(&out.join("history.json"), &result.history)?;
    println!("checkpoint {}", out.join("model.ckpt").display());
    Ok(())
}

fn load_for_inference(cfg: &RunConfig, out: &Path, checkpoint: Option<PathBuf>) -> Result<(Checkpoint, Dataset)> {
    let path = checkpoint.unwrap_or_else(|| out.join("model.ckpt"));
    let ck = load_checkpoint(&path)?;
    let manifest = if cfg.data.eval_manifest.is_empty() {
        &cfg.data.manifest
    } else {
        &cfg.data.eval_manifest
    };
    let ds = load_manifest_for(Path::new(manifest), &ck.classes, cfg.data.clip_len)?;
    Ok((ck, ds))
}

fn eval(common: &Common, checkpoint: Option<PathBuf>) -> Result<()> {
    let (cfg, out) = prepare(common)?;
    let (ck, ds) = load_for_inference(&cfg, &out, checkpoint)?;
    let model = SwinModel::new(ck.model.clone())?;
    let report = evaluate(&model, &ck.backbone, &ck.classes, &ds.clips, &cfg.augment(), cfg.batch_size)?;
    report.write_json(&out.join("eval_report.json"))?;
    report.write_confusion_csv(&out.join("confusion.csv"))?;
    println!(
        "top1 {:.4} video_top1 {:.4} clips {}",
        report.top1, report.video_top1, report.num_clips
    );
    Ok(())
}

fn cv(common: &Common) -> Result<()> {
    let (cfg, out) = prepare(common)?;
    let ds = load_manifest(Path::new(&cfg.data.manifest), cfg.data.clip_len)?;
    let supervision = Supervision::for_config(&cfg, &ds.classes)?;
    let summary = cross_validate(&ds, &cfg, &supervision, common.jobs, &|fold, s| {
        println!("fold {fold} {}", s.line())
    })?;
    write_json(&out.join("cv_summary.json"), &summary)?;
    println!(
        "averaged_top1 {:.4} folds {:?}",
        summary.averaged_top1, summary.fold_accuracies
    );
    Ok(())
}

fn viz(common: &Common, checkpoint: Option<PathBuf>, clips: usize) -> Result<()> {
    let (cfg, out) = prepare(common)?;
    let (ck, ds) = load_for_inference(&cfg, &out, checkpoint)?;
    let model = SwinModel::new(ck.model.clone())?;
    let params = ck.backbone.cast::<f64>().bind(false)?;
    let spec = cfg.augment();
    // evaluation-mode preprocessing draws nothing from the rng
    let mut rng = Rng::new(cfg.seed);
    for clip in ds.clips.iter().take(clips) {
        let input = batch_tensor(&[clip], &spec, &mut rng, false)?;
        let frames = Video::new(spec.frames, spec.crop, spec.crop, input.to_vec(), true)?;
        let input = Tensor::new(input.shape(), input.data().iter().map(|&v| v as f64).collect())?;
        let mask = attention_mask(&model, &params, &input)?;
        let dir = out.join("viz").join(format!("{}_clip{:03}", clip.video_id, clip.clip_index));
        // the mask is already normalized per clip
        overlay_and_export(mask.clip(0), &frames, &dir, NormMode::None)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_splitting_respects_brackets() {
        let got = split_overrides(&["epochs=3,betas=[0.9,0.99]".into(), "mode=vst_l".into()]);
        assert_eq!(got, vec!["epochs=3", "betas=[0.9,0.99]", "mode=vst_l"]);
    }

    #[test]
    fn overrides_need_existing_keys() {
        let mut v = serde_json::to_value(RunConfig::tiny()).unwrap();
        apply_override(&mut v, "data.clip_len=8").unwrap();
        apply_override(&mut v, "mode=vst_l").unwrap();
        assert_eq!(v["data"]["clip_len"], 8);
        assert_eq!(v["mode"], "vst_l");
        assert!(apply_override(&mut v, "data.nope=1").is_err());
        assert!(apply_override(&mut v, "epochs").is_err());
    }

    #[test]
    fn merge_is_deep() {
        let mut a = serde_json::json!({"a": {"b": 1, "c": 2}, "d": 3});
        merge(&mut a, serde_json::json!({"a": {"c": 5}}));
        assert_eq!(a, serde_json::json!({"a": {"b": 1, "c": 5}, "d": 3}));
    }
}
