use serde::{Deserialize, Serialize};

use crate::data::{AugmentSpec, SynthDatasetSpec};
use crate::swin::{ModelConfig, Preset};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Vision only: cross-entropy.
    Vst,
    /// Cross-entropy plus alignment to frozen class embeddings.
    VstL,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Pseudo,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub source: EmbeddingKind,
    /// Width of pseudo embeddings; ignored for files.
    pub dim: usize,
    /// JSON embedding file, used when `source` is `file`.
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Training (or cross-validation) manifest.
    pub manifest: String,
    /// Manifest used by `eval`; empty means the training manifest.
    pub eval_manifest: String,
    /// Frames per clip when segmenting videos.
    pub clip_len: usize,
    /// Generator settings for synthetic data.
    pub synth: SynthDatasetSpec,
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub preset: Preset,
    pub epochs: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub batch_size: usize,
    pub seed: u64,
    /// Folds for cross-validation.
    pub k: usize,
    /// Backbone checkpoint to start from; empty trains from scratch.
    pub init_checkpoint: String,
    pub embeddings: EmbeddingConfig,
    pub data: DataConfig,
}

impl RunConfig {
    /// Small desk-scale defaults.
    pub fn tiny() -> Self {
        Self {
            mode: Mode::Vst,
            preset: Preset::Tiny,
            epochs: 16,
            lr0: 3e-4,
            weight_decay: 0.05,
            betas: [0.9, 0.999],
            batch_size: 8,
            seed: 0,
            k: 5,
            init_checkpoint: String::new(),
            embeddings: EmbeddingConfig {
                source: EmbeddingKind::Pseudo,
                dim: 32,
                path: String::new(),
            },
            data: DataConfig {
                manifest: "data/manifest.jsonl".into(),
                eval_manifest: String::new(),
                clip_len: 16,
                synth: SynthDatasetSpec::default(),
            },
        }
    }

    /// Full-size settings: 224x224 input, 30-frame clips, 100 epochs.
    pub fn paper() -> Self {
        let mut c = Self::tiny();
        c.preset = Preset::Paper;
        c.epochs = 100;
        c.lr0 = 1e-3;
        c.embeddings.dim = 512;
        c.data.clip_len = 30;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be > 0".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be > 0, got {}", self.lr0));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !self.betas.iter().all(|b| (0.0..1.0).contains(b)) {
            return bad(format!("betas must lie in [0, 1), got {:?}", self.betas));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be > 0".into());
        }
        if self.k < 2 {
            return bad(format!("k must be >= 2, got {}", self.k));
        }
        if self.data.clip_len == 0 || self.data.clip_len > self.augment().frames {
            return bad(format!(
                "clip_len must be in 1..={} for this preset, got {}",
                self.augment().frames,
                self.data.clip_len
            ));
        }
        if self.mode == Mode::VstL && self.embeddings.source == EmbeddingKind::Pseudo && self.embeddings.dim == 0 {
            return bad("embeddings.dim must be > 0".into());
        }
        Ok(())
    }

    pub fn model(&self, num_classes: usize) -> ModelConfig {
        self.preset.model(num_classes)
    }

    pub fn augment(&self) -> AugmentSpec {
        AugmentSpec::for_preset(self.preset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        for c in [RunConfig::tiny(), RunConfig::paper()] {
            c.validate().unwrap();
            let s = serde_json::to_string(&c).unwrap();
            assert_eq!(serde_json::from_str::<RunConfig>(&s).unwrap(), c);
        }
        assert!(serde_json::to_string(&RunConfig::tiny()).unwrap().contains(r#""mode":"vst""#));
    }

    #[test]
    fn invariants() {
        let mut c = RunConfig::tiny();
        c.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::tiny();
        c.k = 1;
        assert!(c.validate().is_err());
        let mut c = RunConfig::tiny();
        c.lr0 = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::tiny();
        c.data.clip_len = 30;
        assert!(c.validate().is_err());
    }
}
