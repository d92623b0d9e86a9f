use super::config::{ModelConfig, StagePlan};
use super::layers::{patch_embed, patch_merging, shift_mask_values, swin_block_pair};
use super::params::Bound;
use crate::tensor::{Element, Tensor};
use crate::{Error, Result};

/// Attention probabilities captured from one layer, stored at f64.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub batch: usize,
    pub num_windows: usize,
    pub heads: usize,
    /// Tokens per window.
    pub tokens: usize,
    /// Token grid (t, h, w) of the stage.
    pub grid: [usize; 3],
    pub window: [usize; 3],
    /// `[batch, num_windows, heads, tokens, tokens]`, row-major; the last axis is keys.
    pub weights: Vec<f64>,
}

impl AttentionRecord {
    pub fn shape(&self) -> [usize; 5] {
        [self.batch, self.num_windows, self.heads, self.tokens, self.tokens]
    }
}

pub struct ForwardOutput<T: Element> {
    /// `[B, K]`
    pub logits: Tensor<T>,
    /// Pooled feature `[B, 8C]`, the exact input of the classification head.
    pub feature: Tensor<T>,
    pub attention: Option<AttentionRecord>,
}

/// The visual network. Holds only the derived stage layout; weights are passed
/// in per call so one model can serve concurrent read-only inference.
#[derive(Clone, Debug)]
pub struct SwinModel {
    config: ModelConfig,
    stages: Vec<StagePlan>,
    masks: Vec<Option<Vec<f64>>>,
}

impl SwinModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let stages = config.stages()?;
        let masks = stages
            .iter()
            .map(|s| s.is_shifted().then(|| shift_mask_values(s.grid, s.window, s.shift)))
            .collect();
        Ok(Self { config, stages, masks })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn stages(&self) -> &[StagePlan] {
        &self.stages
    }

    /// Patch embedding, four stages with merging after the first three, final
    /// norm, mean pooling over all tokens and the linear head. With `capture`,
    /// the unshifted attention of the last block pair of the last stage is
    /// returned alongside.
    pub fn forward<T: Element>(&self, params: &Bound<T>, video: &Tensor<T>, capture: bool) -> Result<ForwardOutput<T>> {
        let cfg = &self.config;
        let s = video.shape();
        if s.len() != 5 || s[1..] != cfg.input_shape {
            return Err(Error::Data(format!(
                "video shape {s:?} does not match [B, {:?}]",
                cfg.input_shape
            )));
        }
        let batch = s[0];
        let eps = cfg.ln_eps;
        let mut x = patch_embed(
            video,
            cfg.patch_size,
            params.get("patch_embed.weight")?,
            params.get("patch_embed.bias")?,
        )?;
        let mut captured = None;
        for (plan, mask_vals) in self.stages.iter().zip(&self.masks) {
            let n = plan.tokens_per_window();
            let mask = mask_vals
                .as_ref()
                .map(|m| Tensor::new(&[plan.num_windows(), n, n], m.iter().map(|&v| T::of(v)).collect()))
                .transpose()?;
            for pair in 0..plan.pairs {
                let (y, attn) = swin_block_pair(&x, params, plan, pair, mask.as_ref(), eps)?;
                x = y;
                if capture && plan.index == 3 && pair + 1 == plan.pairs {
                    captured = Some(AttentionRecord {
                        batch,
                        num_windows: plan.num_windows(),
                        heads: plan.heads,
                        tokens: n,
                        grid: plan.grid,
                        window: plan.window,
                        weights: attn.data().iter().map(|v| v.to_f64()).collect(),
                    });
                }
            }
            if plan.merge {
                let p = |name: &str| params.get(&format!("stages.{}.merge.{name}", plan.index));
                x = patch_merging(&x, p("norm.weight")?, p("norm.bias")?, p("reduction.weight")?, eps)?;
            }
        }
        let last = &self.stages[3];
        let tokens: usize = last.grid.iter().product();
        let feature = x
            .layer_norm(params.get("norm.weight")?, params.get("norm.bias")?, eps)?
            .reshape(&[batch, tokens, last.dim])?
            .mean_axis(1)?;
        let logits = feature.linear(params.get("head.weight")?, Some(params.get("head.bias")?))?;
        Ok(ForwardOutput {
            logits,
            feature,
            attention: captured,
        })
    }
}
