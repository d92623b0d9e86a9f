//! Resize, crop, flip and normalize a clip into the network's input layout.

use serde::{Deserialize, Serialize};

use super::video::{resize_window, Video};
use crate::rng::Rng;
use crate::swin::Preset;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    /// Shortest side after the first resize.
    pub short_side: usize,
    /// Square crop size.
    pub crop: usize,
    /// Output frame count; shorter clips are padded by repeating the last frame.
    pub frames: usize,
}

impl AugmentSpec {
    pub fn for_preset(p: Preset) -> Self {
        match p {
            // no crop jitter: the network has no positional encoding, and
            // shifting small frames by a few pixels slowed training markedly
            Preset::Tiny => Self {
                short_side: 32,
                crop: 32,
                frames: 16,
            },
            Preset::Paper => Self {
                short_side: 256,
                crop: 224,
                frames: 32,
            },
        }
    }

    fn resized(&self, h: usize, w: usize) -> (usize, usize) {
        let s = self.short_side;
        if h <= w {
            (s, ((w * s) as f64 / h as f64).round() as usize)
        } else {
            (((h * s) as f64 / w as f64).round() as usize, s)
        }
    }
}

/// The random choices made for one clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentDraw {
    pub offset_y: usize,
    pub offset_x: usize,
    pub flip: bool,
}

impl AugmentDraw {
    /// Train path: one crop offset and one flip draw for the whole clip.
    pub fn random(spec: &AugmentSpec, height: usize, width: usize, rng: &mut Rng) -> Self {
        let (h, w) = spec.resized(height, width);
        let offset_y = rng.below(h.saturating_sub(spec.crop) + 1);
        let offset_x = rng.below(w.saturating_sub(spec.crop) + 1);
        let flip = rng.bernoulli(0.5);
        Self { offset_y, offset_x, flip }
    }

    /// Eval path: centre crop, no flip.
    pub fn center(spec: &AugmentSpec, height: usize, width: usize) -> Self {
        let (h, w) = spec.resized(height, width);
        Self {
            offset_y: h.saturating_sub(spec.crop) / 2,
            offset_x: w.saturating_sub(spec.crop) / 2,
            flip: false,
        }
    }
}

/// Apply `draw` to `clip`, giving `[frames, crop, crop, 3]` in [0, 1].
pub fn apply_augment(clip: &Video, spec: &AugmentSpec, draw: AugmentDraw) -> Result<Video> {
    if clip.frames == 0 || clip.frames > spec.frames {
        return Err(Error::Data(format!(
            "clip has {} frames, expected between 1 and {}",
            clip.frames, spec.frames
        )));
    }
    let (h, w) = spec.resized(clip.height, clip.width);
    if h < spec.crop || w < spec.crop {
        return Err(Error::Data(format!("resized frame {h}x{w} smaller than crop {}", spec.crop)));
    }
    let c = spec.crop;
    let scale = if clip.normalized { 1.0 } else { 1.0 / 255.0 };
    let mut frame = Vec::with_capacity(c * c * 3);
    let mut data = Vec::with_capacity(spec.frames * c * c * 3);
    for t in 0..clip.frames {
        frame.clear();
        let window = (draw.offset_y, draw.offset_x);
        resize_window(clip.frame(t), clip.height, clip.width, h, w, window, (c, c), &mut frame);
        if draw.flip {
            flip_rows(&mut frame, c);
        }
        data.extend(frame.iter().map(|&v| (v * scale).clamp(0.0, 1.0)));
    }
    let last = data[(clip.frames - 1) * c * c * 3..].to_vec();
    for _ in clip.frames..spec.frames {
        data.extend_from_slice(&last);
    }
    Video::new(spec.frames, c, c, data, true)
}

/// Train path draws from `rng`; eval path is deterministic and ignores it.
pub fn augment_clip(clip: &Video, spec: &AugmentSpec, rng: &mut Rng, train: bool) -> Result<Video> {
    let draw = if train {
        AugmentDraw::random(spec, clip.height, clip.width, rng)
    } else {
        AugmentDraw::center(spec, clip.height, clip.width)
    };
    apply_augment(clip, spec, draw)
}

fn flip_rows(frame: &mut [f32], width: usize) {
    for row in frame.chunks_exact_mut(width * 3) {
        for x in 0..width / 2 {
            for c in 0..3 {
                row.swap(x * 3 + c, (width - 1 - x) * 3 + c);
            }
        }
    }
}

/// Mirror every frame left to right.
pub fn flip_horizontal(v: &Video) -> Video {
    let mut out = v.clone();
    for f in out.data.chunks_exact_mut(v.frame_len()) {
        flip_rows(f, v.width);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper() -> AugmentSpec {
        AugmentSpec::for_preset(Preset::Paper)
    }

    #[test]
    fn eval_constant_input() {
        let clip = Video::new(30, 240, 320, vec![0.5; 30 * 240 * 320 * 3], true).unwrap();
        let out = augment_clip(&clip, &paper(), &mut Rng::new(0), false).unwrap();
        assert_eq!(out.shape(), [32, 224, 224, 3]);
        assert!(out.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn raw_levels_are_scaled() {
        let clip = Video::new(16, 32, 32, vec![255.0; 16 * 32 * 32 * 3], false).unwrap();
        let spec = AugmentSpec::for_preset(Preset::Tiny);
        let out = augment_clip(&clip, &spec, &mut Rng::new(1), true).unwrap();
        assert_eq!(out.shape(), [16, 32, 32, 3]);
        assert!(out.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn deterministic_in_seed() {
        let mut r = Rng::new(4);
        let clip = Video::new(16, 32, 40, (0..16 * 32 * 40 * 3).map(|_| r.uniform(0.0, 1.0) as f32).collect(), true)
            .unwrap();
        let spec = AugmentSpec::for_preset(Preset::Tiny);
        let a = augment_clip(&clip, &spec, &mut Rng::new(9), true).unwrap();
        let b = augment_clip(&clip, &spec, &mut Rng::new(9), true).unwrap();
        assert_eq!(a, b);
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn flip_is_involution() {
        let mut r = Rng::new(5);
        let clip = Video::new(2, 4, 5, (0..120).map(|_| r.uniform(0.0, 1.0) as f32).collect(), true).unwrap();
        assert_eq!(flip_horizontal(&flip_horizontal(&clip)), clip);
        let spec = AugmentSpec {
            short_side: 4,
            crop: 4,
            frames: 2,
        };
        let draw = AugmentDraw {
            offset_y: 0,
            offset_x: 0,
            flip: true,
        };
        let once = apply_augment(&clip, &spec, draw).unwrap();
        let twice = apply_augment(&once, &spec, draw).unwrap();
        let plain = apply_augment(&clip, &spec, AugmentDraw { flip: false, ..draw }).unwrap();
        assert_eq!(twice, plain);
    }

    #[test]
    fn pads_thirty_to_thirty_two() {
        let mut data = vec![0.0; 30 * 8 * 8 * 3];
        let n = 8 * 8 * 3;
        data[29 * n..].iter_mut().for_each(|v| *v = 1.0);
        let clip = Video::new(30, 8, 8, data, true).unwrap();
        let spec = AugmentSpec {
            short_side: 8,
            crop: 8,
            frames: 32,
        };
        let out = augment_clip(&clip, &spec, &mut Rng::new(0), false).unwrap();
        assert!(out.frame(30).iter().all(|&v| v == 1.0));
        assert!(out.frame(31).iter().all(|&v| v == 1.0));
        assert!(out.frame(28).iter().all(|&v| v == 0.0));
    }
}
