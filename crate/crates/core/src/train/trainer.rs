//! The epoch loop for both training modes.

#[cfg(feature = "language")]
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Mode, RunConfig};
use super::optim::{cosine_anneal_lr, AdamW};
use crate::classes::ClassSet;
use crate::data::{augment_clip, AugmentSpec, Clip};
use crate::rng::{Rng, Stream};
use crate::swin::{ParamStore, SwinModel};
use crate::tensor::{cross_entropy, Tensor, TensorError};
use crate::{Error, Result};

#[cfg(feature = "language")]
use crate::lang::{alignment_stats, cosine_contrastive_loss, project_visual, total_loss, ClassEmbeddings};

/// Name of the training-only visual projection.
pub const PROJECTION: &str = "aux.proj.weight";

/// What supervises training besides the labels.
#[derive(Clone, Debug)]
pub enum Supervision {
    VisionOnly,
    #[cfg(feature = "language")]
    Language(ClassEmbeddings),
}

impl Supervision {
    /// The supervision `cfg.mode` asks for. Pseudo embeddings are drawn from
    /// the run seed; file embeddings are matched to `classes` by name.
    pub fn for_config(cfg: &RunConfig, classes: &ClassSet) -> Result<Self> {
        match cfg.mode {
            Mode::Vst => Ok(Supervision::VisionOnly),
            #[cfg(feature = "language")]
            Mode::VstL => {
                use super::config::EmbeddingKind;
                let emb = match cfg.embeddings.source {
                    EmbeddingKind::Pseudo => crate::lang::pseudo_embeddings(classes.len(), cfg.embeddings.dim, cfg.seed)?,
                    EmbeddingKind::File => crate::lang::load_embeddings(Path::new(&cfg.embeddings.path), classes)?,
                };
                Ok(Supervision::Language(emb))
            }
            #[cfg(not(feature = "language"))]
            Mode::VstL => {
                let _ = classes;
                Err(Error::Config("mode vst_l needs a build with the language feature".into()))
            }
        }
    }

    fn check(&self, mode: Mode) -> Result<()> {
        match (mode, self) {
            (Mode::Vst, Supervision::VisionOnly) => Ok(()),
            #[cfg(feature = "language")]
            (Mode::VstL, Supervision::Language(_)) => Ok(()),
            (Mode::VstL, _) if !cfg!(feature = "language") => {
                Err(Error::Config("mode vst_l needs a build with the language feature".into()))
            }
            (Mode::VstL, _) => Err(Error::Config("mode vst_l needs class embeddings".into())),
            #[cfg(feature = "language")]
            (Mode::Vst, Supervision::Language(_)) => Err(Error::Config("mode vst takes no class embeddings".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean of the training objective.
    pub loss: f64,
    pub train_acc: f64,
    /// Mean cosine of projected features to their own class embedding.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched_cosine: Option<f64>,
    /// Mean cosine to every other class embedding.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mismatched_cosine: Option<f64>,
}

impl EpochStats {
    /// One progress line.
    pub fn line(&self) -> String {
        let mut s = format!(
            "epoch {:>3} lr {:.6} loss {:.4} train_acc {:.4}",
            self.epoch, self.lr, self.loss, self.train_acc
        );
        if let Some(c) = self.matched_cosine {
            s.push_str(&format!(" matched_cos {c:.4}"));
        }
        s
    }
}

pub struct TrainOutput {
    /// Backbone followed by any `aux.*` parameters.
    pub params: ParamStore<f32>,
    pub optimizer: AdamW<f32>,
    pub history: Vec<EpochStats>,
}

impl TrainOutput {
    /// Split into inference parameters and training-only ones.
    pub fn split(&self) -> (ParamStore<f32>, ParamStore<f32>) {
        let mut backbone = ParamStore::default();
        let mut aux = ParamStore::default();
        for (name, p) in self.params.iter() {
            let dst = if name.starts_with("aux.") { &mut aux } else { &mut backbone };
            dst.insert(name, p.shape.clone(), p.data.clone()).expect("unique names");
        }
        (backbone, aux)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Stack augmented clips into `[B, T, H, W, 3]`.
pub fn batch_tensor(clips: &[&Clip], spec: &AugmentSpec, rng: &mut Rng, train: bool) -> Result<Tensor<f32>> {
    let mut data = Vec::new();
    for c in clips {
        data.extend(augment_clip(&c.frames, spec, rng, train)?.data);
    }
    Ok(Tensor::new(&[clips.len(), spec.frames, spec.crop, spec.crop, 3], data)?)
}

fn numeric(epoch: usize, step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Tensor(TensorError::NonFinite { .. }) => Error::NonFiniteLoss { epoch, step },
        other => other,
    }
}

/// Train one model on `clips`. `init` replaces the random backbone initialization.
pub fn train_one_model(
    clips: &[Clip],
    classes: &ClassSet,
    cfg: &RunConfig,
    supervision: &Supervision,
    init: Option<&ParamStore<f32>>,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutput> {
    cfg.validate()?;
    supervision.check(cfg.mode)?;
    if clips.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let model_cfg = cfg.model(classes.len());
    let model = SwinModel::new(model_cfg.clone())?;
    let mut params = match init {
        Some(p) => {
            p.check_against(&crate::swin::param_specs(&model_cfg)?)?;
            p.clone()
        }
        None => ParamStore::init(&model_cfg, cfg.seed)?,
    };
    #[cfg(feature = "language")]
    if let Supervision::Language(emb) = supervision {
        let shape = vec![model_cfg.feature_dim(), emb.dim()];
        let n = shape.iter().product();
        let mut rng = Rng::stream(cfg.seed, Stream::AuxInit);
        let data = (0..n)
            .map(|_| rng.truncated_normal(crate::swin::params::INIT_STD) as f32)
            .collect();
        params.insert(PROJECTION, shape, data)?;
    }
    let mut optimizer = AdamW::new(&params, cfg.betas, cfg.weight_decay);
    let spec = cfg.augment();
    let mut shuffle_rng = Rng::stream(cfg.seed, Stream::Shuffle);
    let mut augment_rng = Rng::stream(cfg.seed, Stream::Augment);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = cosine_anneal_lr(epoch, cfg.epochs, cfg.lr0);
        shuffle_rng.shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        #[cfg_attr(not(feature = "language"), allow(unused_mut))]
        let (mut matched_sum, mut mismatched_sum, mut aligned) = (0.0f64, 0.0f64, false);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Clip> = chunk.iter().map(|&i| &clips[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|c| c.label).collect();
            let x = batch_tensor(&batch, &spec, &mut augment_rng, true)?;
            let bound = params.bind(true)?;
            let fail = numeric(epoch, step);
            let out = model.forward(&bound, &x, false).map_err(&fail)?;
            let ce = cross_entropy(&out.logits, &labels).map_err(|e| fail(e.into()))?;
            let loss = match supervision {
                Supervision::VisionOnly => ce,
                #[cfg(feature = "language")]
                Supervision::Language(emb) => {
                    let projected = project_visual(&out.feature, bound.get(PROJECTION)?).map_err(&fail)?;
                    let targets = emb.gather::<f32>(&labels)?;
                    let contrastive = cosine_contrastive_loss(&projected, &targets).map_err(&fail)?;
                    let v: Vec<f64> = projected.data().iter().map(|&a| a as f64).collect();
                    let all: Vec<f64> = (0..emb.num_classes()).flat_map(|c| emb.vector(c).to_vec()).collect();
                    let s = alignment_stats(&v, &all, emb.dim(), &labels);
                    matched_sum += s.matched * labels.len() as f64;
                    mismatched_sum += s.mismatched * labels.len() as f64;
                    aligned = true;
                    total_loss(&ce, &contrastive, true).map_err(&fail)?
                }
            };
            let value = loss.item() as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            loss_sum += value * labels.len() as f64;
            let k = classes.len();
            correct += out
                .logits
                .data()
                .chunks_exact(k)
                .zip(&labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            loss.backward()?;
            optimizer.step(&mut params, &bound.grads(), lr)?;
            if params.iter().any(|(_, p)| !p.data.iter().all(|v| v.is_finite())) {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            step += 1;
        }
        let n = clips.len() as f64;
        let stats = EpochStats {
            epoch,
            lr,
            loss: loss_sum / n,
            train_acc: correct as f64 / n,
            matched_cosine: aligned.then(|| matched_sum / n),
            mismatched_cosine: aligned.then(|| mismatched_sum / n),
        };
        progress(&stats);
        history.push(stats);
    }
    Ok(TrainOutput {
        params,
        optimizer,
        history,
    })
}
