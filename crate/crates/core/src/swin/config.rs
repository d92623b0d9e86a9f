use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture hyperparameters of the visual network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Frames, height, width, channels.
    pub input_shape: [usize; 4],
    /// Frames, height, width covered by one token.
    pub patch_size: [usize; 3],
    /// Token width after patch embedding (C).
    pub embed_dim: usize,
    /// Block pairs per stage.
    pub depths: [usize; 4],
    pub head_dim: usize,
    /// Attention window in tokens (t, h, w).
    pub window: [usize; 3],
    /// Offset of the shifted layer, in tokens.
    pub shift: [usize; 3],
    pub mlp_ratio: usize,
    pub num_classes: usize,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
}

fn default_ln_eps() -> f64 {
    1e-5
}

/// Named size presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 16 x 32 x 32 input, C = 16, depths [1, 1, 2, 1].
    Tiny,
    /// 32 x 224 x 224 input, C = 96, depths [2, 2, 6, 2].
    Paper,
}

impl Preset {
    pub fn model(self, num_classes: usize) -> ModelConfig {
        match self {
            Preset::Tiny => ModelConfig::tiny(num_classes),
            Preset::Paper => ModelConfig::paper(num_classes),
        }
    }
}

/// Everything one stage needs, derived from [`ModelConfig`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StagePlan {
    pub index: usize,
    /// Token grid (t, h, w) seen by this stage's blocks.
    pub grid: [usize; 3],
    pub dim: usize,
    pub heads: usize,
    pub window: [usize; 3],
    pub shift: [usize; 3],
    pub pairs: usize,
    /// Whether a patch-merging layer follows this stage.
    pub merge: bool,
}

impl StagePlan {
    pub fn tokens_per_window(&self) -> usize {
        self.window.iter().product()
    }

    pub fn num_windows(&self) -> usize {
        (0..3).map(|a| self.grid[a] / self.window[a]).product()
    }

    pub fn is_shifted(&self) -> bool {
        self.shift.iter().any(|&s| s > 0)
    }
}

impl ModelConfig {
    pub fn tiny(num_classes: usize) -> Self {
        Self {
            input_shape: [16, 32, 32, 3],
            patch_size: [2, 4, 4],
            embed_dim: 16,
            depths: [1, 1, 2, 1],
            head_dim: 8,
            window: [2, 4, 4],
            shift: [1, 2, 2],
            mlp_ratio: 4,
            num_classes,
            ln_eps: default_ln_eps(),
        }
    }

    pub fn paper(num_classes: usize) -> Self {
        Self {
            input_shape: [32, 224, 224, 3],
            patch_size: [2, 4, 4],
            embed_dim: 96,
            depths: [2, 2, 6, 2],
            head_dim: 32,
            window: [2, 4, 4],
            shift: [1, 2, 2],
            mlp_ratio: 4,
            num_classes,
            ln_eps: default_ln_eps(),
        }
    }

    /// Raw scalars per patch (2 * 4 * 4 * 3 = 96 by default).
    pub fn patch_dim(&self) -> usize {
        self.patch_size.iter().product::<usize>() * self.input_shape[3]
    }

    pub fn token_grid(&self) -> [usize; 3] {
        [
            self.input_shape[0] / self.patch_size[0],
            self.input_shape[1] / self.patch_size[1],
            self.input_shape[2] / self.patch_size[2],
        ]
    }

    /// Width of the pooled feature fed to the head (8C).
    pub fn feature_dim(&self) -> usize {
        self.embed_dim << 3
    }

    /// Per-stage plan, validating every divisibility constraint.
    ///
    /// On an axis where the stage grid is not larger than the window, or is
    /// not a multiple of it, the window covers the whole axis and that axis is
    /// not shifted.
    pub fn stages(&self) -> Result<Vec<StagePlan>> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.input_shape[3] != 3 {
            return bad(format!("input must have 3 channels, got {}", self.input_shape[3]));
        }
        for a in 0..3 {
            if self.patch_size[a] == 0 || self.input_shape[a] == 0 || self.input_shape[a] % self.patch_size[a] != 0 {
                return bad(format!(
                    "input {:?} not divisible by patch {:?}",
                    &self.input_shape[..3],
                    self.patch_size
                ));
            }
            if self.window[a] == 0 {
                return bad("window dims must be >= 1".into());
            }
            if self.shift[a] >= self.window[a] {
                return bad(format!("shift {:?} must be smaller than window {:?}", self.shift, self.window));
            }
        }
        if self.embed_dim == 0 || self.head_dim == 0 || self.mlp_ratio == 0 || self.num_classes == 0 {
            return bad("embed_dim, head_dim, mlp_ratio and num_classes must be >= 1".into());
        }
        if self.depths.contains(&0) {
            return bad(format!("every stage needs at least one block pair, got {:?}", self.depths));
        }
        if !(self.ln_eps > 0.0) {
            return bad("ln_eps must be > 0".into());
        }

        let mut grid = self.token_grid();
        let mut dim = self.embed_dim;
        let mut plans = Vec::with_capacity(4);
        for (index, &pairs) in self.depths.iter().enumerate() {
            if dim % self.head_dim != 0 {
                return bad(format!("stage {index}: width {dim} not divisible by head_dim {}", self.head_dim));
            }
            let mut window = [0; 3];
            let mut shift = [0; 3];
            for a in 0..3 {
                if grid[a] > self.window[a] && grid[a] % self.window[a] == 0 {
                    window[a] = self.window[a];
                    shift[a] = self.shift[a];
                } else {
                    window[a] = grid[a];
                }
            }
            let merge = index < 3;
            if merge && (grid[1] % 2 != 0 || grid[2] % 2 != 0) {
                return bad(format!("stage {index}: grid {grid:?} has odd spatial dims, cannot merge"));
            }
            plans.push(StagePlan {
                index,
                grid,
                dim,
                heads: dim / self.head_dim,
                window,
                shift,
                pairs,
                merge,
            });
            if merge {
                grid = [grid[0], grid[1] / 2, grid[2] / 2];
                dim *= 2;
            }
        }
        Ok(plans)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_grids() {
        let cfg = ModelConfig::paper(4);
        assert_eq!(cfg.patch_dim(), 96);
        assert_eq!(cfg.token_grid(), [16, 56, 56]);
        assert_eq!(cfg.feature_dim(), 768);
        let stages = cfg.stages().unwrap();
        assert_eq!(stages[0].num_windows(), 8 * 14 * 14);
        assert_eq!(stages[0].tokens_per_window(), 32);
        assert_eq!(stages[0].shift, [1, 2, 2]);
        assert_eq!(stages[3].grid, [16, 7, 7]);
        assert_eq!(stages[3].dim, 768);
        assert_eq!(stages[3].window, [2, 7, 7]);
        assert_eq!(stages[3].shift, [1, 0, 0]);
        assert_eq!(stages.iter().map(|s| s.heads).collect::<Vec<_>>(), vec![3, 6, 12, 24]);
    }

    #[test]
    fn tiny_preset_grids() {
        let stages = ModelConfig::tiny(4).stages().unwrap();
        let grids: Vec<_> = stages.iter().map(|s| s.grid).collect();
        assert_eq!(grids, vec![[8, 8, 8], [8, 4, 4], [8, 2, 2], [8, 1, 1]]);
        assert_eq!(stages[0].window, [2, 4, 4]);
        assert_eq!(stages[1].window, [2, 4, 4]);
        assert_eq!(stages[1].shift, [1, 0, 0]);
        assert_eq!(stages[2].window, [2, 2, 2]);
        for s in &stages {
            for a in 0..3 {
                assert_eq!(s.grid[a] % s.window[a], 0);
                assert!(s.shift[a] < s.window[a]);
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ModelConfig::tiny(4);
        c.input_shape[0] = 15;
        assert!(c.stages().is_err());
        let mut c = ModelConfig::tiny(4);
        c.shift = [2, 2, 2];
        assert!(c.stages().is_err());
        let mut c = ModelConfig::tiny(4);
        c.head_dim = 5;
        assert!(c.stages().is_err());
        let mut c = ModelConfig::tiny(4);
        c.input_shape[1] = 36; // 9 tokens: odd, cannot merge
        assert!(c.stages().is_err());
    }
}
